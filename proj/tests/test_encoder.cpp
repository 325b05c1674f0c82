#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "pqa/encoder.hpp"
#include "pqa/errors.hpp"

using namespace pqa;

namespace {

LayerSpec layer(std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t h, std::size_t w,
                std::size_t stride = 1, std::size_t groups = 1) {
    LayerSpec l;
    l.name = "t";
    l.kind = k == 1 ? LayerKind::pointwise : LayerKind::conv;
    if (groups > 1) l.kind = LayerKind::depthwise;
    l.c_in = c_in;
    l.c_out = c_out;
    l.k_h = l.k_w = k;
    l.in_h = h;
    l.in_w = w;
    l.stride = stride;
    l.groups = groups;
    return l;
}

PrototypeBank line_bank() {
    PrototypeBank b(1, 3, 2);
    b.values = {0, 0, 1, 1, 2, 2};
    return b;
}

}  // namespace

TEST_CASE("im2col of an all-ones 2x2 input counts in-bounds taps") {
    Tensor3 in(1, 2, 2, 1.0);
    const Matrix x = unroll_im2col(in, layer(1, 1, 3, 2, 2));
    REQUIRE(x.rows() == 9);
    REQUIRE(x.cols() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
        double s = 0;
        for (std::size_t r = 0; r < 9; ++r) s += x(r, j);
        CHECK(s == 4.0);
    }
}

TEST_CASE("im2col shape of a 32x16x16 input under a 3x3 conv") {
    Tensor3 in(32, 16, 16, 0.5);
    const Matrix x = unroll_im2col(in, layer(32, 32, 3, 16, 16));
    CHECK(x.rows() == 288);
    CHECK(x.cols() == 256);
}

TEST_CASE("im2col times unrolled weights equals direct convolution") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1, 1);
    const LayerSpec cases[] = {layer(3, 5, 3, 7, 6), layer(4, 2, 3, 8, 8, 2), layer(2, 3, 1, 5, 4),
                               layer(3, 4, 5, 6, 9, 3), layer(4, 4, 3, 6, 5, 1, 4)};
    for (const auto& l : cases) {
        Tensor3 in(l.c_in, l.in_h, l.in_w);
        for (double& v : in.data) v = u(rng);
        std::vector<double> w(l.c_out * (l.c_in / l.groups) * l.k_h * l.k_w);
        for (double& v : w) v = u(rng);
        const Tensor3 want = oracle::direct_conv(in, w, l);
        const Matrix x = unroll_im2col(in, l);
        const Matrix wu = unroll_weights(w, l);
        const std::size_t a = wu.cols(), og = l.c_out / l.groups;
        Matrix y(l.c_out, x.cols());
        for (std::size_t o = 0; o < l.c_out; ++o)
            for (std::size_t j = 0; j < x.cols(); ++j) {
                double s = 0;
                for (std::size_t r = 0; r < a; ++r) s += wu(o, r) * x((o / og) * a + r, j);
                y(o, j) = s;
            }
        const Tensor3 got = roll_output(y, l);
        REQUIRE(got.data.size() == want.data.size());
        for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("im2col rejects a mismatched input") {
    Tensor3 in(2, 4, 4);
    CHECK_THROWS_AS(unroll_im2col(in, layer(3, 3, 3, 4, 4)), ShapeError);
    CHECK_THROWS_AS(unroll_weights(std::vector<double>(5), layer(1, 1, 3, 4, 4)), ShapeError);
}

TEST_CASE("gather pads the tail with zeros") {
    Matrix x(5, 1, std::vector<double>{1, 2, 3, 4, 5});
    const auto lay = subspace_layout(5, 3);
    std::vector<double> sub(3);
    gather_subvector(x, lay, 1, 0, sub);
    CHECK(sub == std::vector<double>{4, 5, 0});
}

TEST_CASE("distance examples") {
    const auto bank = line_bank();
    const std::vector<double> x{1, 2};
    CHECK(compute_distances(x, bank, 0, Metric::l2_squared) == std::vector<double>{5, 1, 1});
    CHECK(compute_distances(x, bank, 0, Metric::l1) == std::vector<double>{3, 1, 1});
    const std::vector<double> p{1, 1};
    CHECK(distance(p, bank.prototype(0, 1), Metric::l2_squared) == 0.0);
    CHECK(distance(p, bank.prototype(0, 1), Metric::l1) == 0.0);
}

TEST_CASE("hard encoding breaks ties toward the lowest index") {
    const auto bank = line_bank();
    Matrix x(2, 1, std::vector<double>{1, 2});
    const auto enc = encode_hard(x, bank, subspace_layout(2, 2), Metric::l2_squared, true);
    CHECK(enc.index(0, 0) == 1);
    REQUIRE(enc.distances);
    CHECK(*enc.distances == std::vector<double>{5, 1, 1});
}

TEST_CASE("hard encoding of exact prototypes returns them with zero distance") {
    std::mt19937_64 rng(3);
    const auto bank = oracle::random_bank(3, 5, 4, rng);
    const auto lay = subspace_layout(12, 4);
    Matrix x(12, 5);
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t e = 0; e < 4; ++e) x(n * 4 + e, j) = bank.prototype(n, (j + n) % 5)[e];
    const auto enc = encode_hard(x, bank, lay, Metric::l2_squared, true);
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t n = 0; n < 3; ++n) {
            CHECK(enc.index(n, j) == (j + n) % 5);
            CHECK((*enc.distances)[(n * 5 + j) * 5 + enc.index(n, j)] == 0.0);
        }
}

TEST_CASE("hard encoding is idempotent on reconstructed inputs") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 50; ++t) {
        auto bank = oracle::random_bank(4, 6, 3, rng);
        const auto lay = subspace_layout(11, 3);
        // Padded tail positions read as zero, so only zero-tailed prototypes are reproducible.
        for (std::size_t p = 0; p < 6; ++p) bank.values[(3 * 6 + p) * 3 + 2] = 0.0;
        const Matrix x = oracle::random_matrix(11, 20, rng);
        for (auto metric : {Metric::l2_squared, Metric::l1}) {
            const auto enc = encode_hard(x, bank, lay, metric);
            Matrix rebuilt(lay.padded_rows(), x.cols());
            for (std::size_t j = 0; j < x.cols(); ++j)
                for (std::size_t n = 0; n < lay.n_s; ++n)
                    for (std::size_t e = 0; e < 3; ++e) rebuilt(n * 3 + e, j) = bank.prototype(n, enc.index(n, j))[e];
            CHECK(encode_hard(rebuilt, bank, lay, metric).indices == enc.indices);
        }
    }
}

TEST_CASE("hard encoding checks shapes") {
    const auto bank = line_bank();
    CHECK_THROWS_AS(encode_hard(Matrix(3, 1), bank, subspace_layout(2, 2), Metric::l2_squared), ShapeError);
    CHECK_THROWS_AS(encode_hard(Matrix(4, 1), bank, subspace_layout(4, 2), Metric::l2_squared), ShapeError);
}

TEST_CASE("soft encoding examples") {
    PrototypeBank bank(1, 2, 2);
    bank.values = {0, 0, 2, 2};
    Matrix x(2, 1, std::vector<double>{1, 1});
    auto enc = encode_soft(x, bank, subspace_layout(2, 2), Metric::l2_squared, 1.0);
    CHECK((*enc.weights)[0] == doctest::Approx(0.5));
    CHECK((*enc.soft_matrix)(0, 0) == doctest::Approx(1.0));
    CHECK((*enc.soft_matrix)(1, 0) == doctest::Approx(1.0));

    const auto b3 = line_bank();
    Matrix at(2, 1, std::vector<double>{2, 2});
    enc = encode_soft(at, b3, subspace_layout(2, 2), Metric::l2_squared, 1e-4);
    CHECK(std::abs((*enc.soft_matrix)(0, 0) - 2.0) <= 1e-4);
    CHECK(std::abs((*enc.soft_matrix)(1, 0) - 2.0) <= 1e-4);

    // L1 distances 0, 1, 2 from the first prototype.
    PrototypeBank b1(1, 3, 1);
    b1.values = {0, 1, 2};
    Matrix z(1, 1, std::vector<double>{0});
    enc = encode_soft(z, b1, subspace_layout(1, 1), Metric::l1, 1.0);
    const double e0 = 1.0, e1 = std::exp(-1.0), e2 = std::exp(-2.0), s = e0 + e1 + e2;
    CHECK((*enc.weights)[0] == doctest::Approx(e0 / s).epsilon(1e-12));
    CHECK((*enc.weights)[1] == doctest::Approx(e1 / s).epsilon(1e-12));
    CHECK((*enc.weights)[2] == doctest::Approx(e2 / s).epsilon(1e-12));
    CHECK((*enc.weights)[0] == doctest::Approx(0.6652).epsilon(1e-4));

    CHECK_THROWS_AS(encode_soft(z, b1, subspace_layout(1, 1), Metric::l1, 0.0), ArgumentError);
}

TEST_CASE("soft weights sum to one and match the hard path at tiny temperature") {
    std::mt19937_64 rng(21);
    for (int t = 0; t < 20; ++t) {
        const auto bank = oracle::random_bank(3, 7, 4, rng);
        const auto lay = subspace_layout(10, 4);
        const Matrix x = oracle::random_matrix(10, 30, rng);
        const auto hard = encode_hard(x, bank, lay, Metric::l2_squared, true);
        const auto soft = encode_soft(x, bank, lay, Metric::l2_squared, 1e-6);
        CHECK(soft.soft_matrix->rows() == x.rows());
        CHECK(soft.soft_matrix->cols() == x.cols());
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t j = 0; j < 30; ++j) {
                const double* w = soft.weights->data() + (n * 30 + j) * 7;
                CHECK(std::accumulate(w, w + 7, 0.0) == doctest::Approx(1.0).epsilon(1e-6));
                CHECK(static_cast<std::size_t>(std::max_element(w, w + 7) - w) == hard.index(n, j));
            }
    }
}

TEST_CASE("k-means on identical samples puts every centroid there") {
    Matrix x(3, 10);
    for (std::size_t j = 0; j < 10; ++j) {
        x(0, j) = 0.25;
        x(1, j) = -1.5;
        x(2, j) = 4.0;
    }
    const auto fit = fit_prototypes(x, PQConfig{3, 3}, subspace_layout(3, 3));
    for (std::size_t p = 0; p < 3; ++p) {
        CHECK(fit.bank.prototype(0, p)[0] == 0.25);
        CHECK(fit.bank.prototype(0, p)[2] == 4.0);
    }
    CHECK(fit.mse_enc == 0.0);
}

TEST_CASE("k-means separates two point clusters") {
    Matrix x(2, 12);
    for (std::size_t j = 0; j < 12; ++j) {
        x(0, j) = j % 2 ? 5.0 : -1.0;
        x(1, j) = j % 2 ? 3.0 : 2.0;
    }
    const auto fit = fit_prototypes(x, PQConfig{2, 2}, subspace_layout(2, 2));
    CHECK(fit.mse_enc == 0.0);
    std::vector<double> firsts{fit.bank.prototype(0, 0)[0], fit.bank.prototype(0, 1)[0]};
    std::sort(firsts.begin(), firsts.end());
    CHECK(firsts == std::vector<double>{-1.0, 5.0});
}

TEST_CASE("k-means with one prototype returns the sample mean") {
    std::mt19937_64 rng(9);
    const Matrix x = oracle::random_matrix(7, 40, rng);
    const auto lay = subspace_layout(7, 3);
    const auto fit = fit_prototypes(x, PQConfig{1, 3}, lay);
    for (std::size_t n = 0; n < lay.n_s; ++n)
        for (std::size_t e = 0; e < 3; ++e) {
            const std::size_t r = n * 3 + e;
            double mean = 0;
            if (r < 7) {
                for (std::size_t j = 0; j < 40; ++j) mean += x(r, j);
                mean /= 40;
            }
            CHECK(std::abs(fit.bank.prototype(n, 0)[e] - mean) <= 1e-12);
        }
}

TEST_CASE("k-means encoding error never increases across iterations") {
    std::mt19937_64 rng(13);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Matrix x = oracle::random_matrix(12, 80, rng);
        FitOptions opt;
        opt.seed = seed;
        opt.init = seed % 2 ? InitMethod::random_samples : InitMethod::kmeans_plus_plus;
        const auto fit = fit_prototypes(x, PQConfig{6, 4}, subspace_layout(12, 4), opt);
        for (const auto& hist : fit.mse_history)
            for (std::size_t t = 1; t < hist.size(); ++t) CHECK(hist[t] <= hist[t - 1]);
    }
}

TEST_CASE("k-means is reproducible for a seed") {
    std::mt19937_64 rng(17);
    const Matrix x = oracle::random_matrix(9, 60, rng);
    FitOptions opt;
    opt.seed = 42;
    const auto a = fit_prototypes(x, PQConfig{5, 3}, subspace_layout(9, 3), opt);
    const auto b = fit_prototypes(x, PQConfig{5, 3}, subspace_layout(9, 3), opt);
    CHECK(a.bank == b.bank);
    CHECK(a.mse_enc == b.mse_enc);
}

TEST_CASE("k-means flags too few samples and rejects none") {
    std::mt19937_64 rng(1);
    const Matrix x = oracle::random_matrix(4, 3, rng);
    const auto fit = fit_prototypes(x, PQConfig{8, 2}, subspace_layout(4, 2));
    CHECK(fit.status == FitStatus::too_few_samples);
    CHECK(fit.bank.n_p == 8);
    CHECK_THROWS_AS(fit_prototypes(Matrix(4, 0), PQConfig{2, 2}, subspace_layout(4, 2)), ArgumentError);
}

TEST_CASE("lut entries are weight sub-row dot prototypes") {
    PrototypeBank bank(1, 1, 2);
    bank.values = {3, 4};
    Matrix w(1, 2, std::vector<double>{1, 2});
    CHECK(build_lut(w, bank, subspace_layout(2, 2)).at(0, 0, 0) == 11.0);

    PrototypeBank basis(1, 3, 3);
    basis.values = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    Matrix w3(1, 3, std::vector<double>{7, 8, 9});
    const auto lut = build_lut(w3, basis, subspace_layout(3, 3));
    CHECK(lut.at(0, 0, 0) == 7.0);
    CHECK(lut.at(0, 0, 1) == 8.0);
    CHECK(lut.at(0, 0, 2) == 9.0);

    std::mt19937_64 rng(2);
    const auto rb = oracle::random_bank(2, 4, 3, rng);
    const auto zero = build_lut(Matrix(5, 6), rb, subspace_layout(6, 3));
    for (double v : zero.values) CHECK(v == 0.0);
}

TEST_CASE("lut entries ignore the padded tail") {
    std::mt19937_64 rng(4);
    const auto bank = oracle::random_bank(2, 3, 4, rng);
    const Matrix w = oracle::random_matrix(2, 7, rng);
    const auto lut = build_lut(w, bank, subspace_layout(7, 4));
    double want = 0;
    for (std::size_t e = 0; e < 3; ++e) want += w(1, 4 + e) * bank.prototype(1, 2)[e];
    CHECK(lut.at(1, 1, 2) == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("refit leaves an exact table unchanged") {
    std::mt19937_64 rng(8);
    const auto bank = oracle::random_bank(3, 4, 2, rng);
    const auto lay = subspace_layout(6, 2);
    const Matrix w = oracle::random_matrix(3, 6, rng);
    const auto lut = build_lut(w, bank, lay);
    const Matrix x = oracle::random_matrix(6, 60, rng);
    const auto enc = encode_hard(x, bank, lay, Metric::l2_squared);
    Matrix target(3, 60);
    for (std::size_t o = 0; o < 3; ++o)
        for (std::size_t j = 0; j < 60; ++j)
            for (std::size_t n = 0; n < 3; ++n) target(o, j) += lut.at(o, n, enc.index(n, j));
    const auto refit = refit_lut(lut, enc, target, 1e-3);
    for (std::size_t i = 0; i < lut.values.size(); ++i) CHECK(std::abs(refit.values[i] - lut.values[i]) <= 1e-9);
}

TEST_CASE("refit with one subspace copies the targets") {
    PrototypeBank bank(1, 3, 1);
    bank.values = {0, 1, 2};
    Matrix x(1, 3, std::vector<double>{0, 1, 2});
    const auto enc = encode_hard(x, bank, subspace_layout(1, 1), Metric::l2_squared);
    LutPQ lut(2, 1, 3);
    Matrix target(2, 3, std::vector<double>{5, 6, 7, -1, -2, -3});
    const auto refit = refit_lut(lut, enc, target, 0.0);
    for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t p = 0; p < 3; ++p) CHECK(refit.at(o, 0, p) == doctest::Approx(target(o, p)));
}

TEST_CASE("refit without ridge matches a least-squares oracle") {
    std::mt19937_64 rng(10);
    // A single subspace keeps the occupancy features full rank.
    for (int t = 0; t < 10; ++t) {
        const auto bank = oracle::random_bank(1, 4, 3, rng);
        const auto lay = subspace_layout(3, 3);
        const Matrix x = oracle::random_matrix(3, 80, rng);
        const auto enc = encode_hard(x, bank, lay, Metric::l2_squared);
        std::vector<int> seen(4, 0);
        for (auto i : enc.indices) seen[i] = 1;
        if (std::count(seen.begin(), seen.end(), 1) < 4) continue;
        const Matrix target = oracle::random_matrix(2, 80, rng);
        const auto refit = refit_lut(LutPQ(2, 1, 4), enc, target, 0.0);
        const auto want = oracle::lstsq_lut(enc, target);
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(refit.values[i] == doctest::Approx(want[i]).epsilon(1e-9));
    }
    // Several subspaces with a ridge: compare against the augmented normal equations.
    const auto bank = oracle::random_bank(3, 3, 2, rng);
    const auto lay = subspace_layout(6, 2);
    const Matrix x = oracle::random_matrix(6, 50, rng);
    const auto enc = encode_hard(x, bank, lay, Metric::l2_squared);
    const Matrix target = oracle::random_matrix(2, 50, rng);
    const LutPQ prior = build_lut(oracle::random_matrix(2, 6, rng), bank, lay);
    const double ridge = 0.3;
    const auto refit = refit_lut(prior, enc, target, ridge);
    Eigen::MatrixXd phi = Eigen::MatrixXd::Zero(50 + 9, 9);
    Eigen::MatrixXd rhs(50 + 9, 2);
    for (std::size_t j = 0; j < 50; ++j) {
        for (std::size_t n = 0; n < 3; ++n) phi(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(n * 3 + enc.index(n, j))) = 1;
        for (std::size_t o = 0; o < 2; ++o) rhs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(o)) = target(o, j);
    }
    for (Eigen::Index f = 0; f < 9; ++f) {
        phi(50 + f, f) = std::sqrt(ridge);
        for (Eigen::Index o = 0; o < 2; ++o) rhs(50 + f, o) = std::sqrt(ridge) * prior.values[static_cast<std::size_t>(o * 9 + f)];
    }
    const Eigen::MatrixXd sol = phi.completeOrthogonalDecomposition().solve(rhs);
    for (Eigen::Index o = 0; o < 2; ++o)
        for (Eigen::Index f = 0; f < 9; ++f)
            CHECK(refit.values[static_cast<std::size_t>(o * 9 + f)] == doctest::Approx(sol(f, o)).epsilon(1e-9));
}

TEST_CASE("refit errors") {
    PrototypeBank bank(1, 3, 1);
    bank.values = {0, 1, 2};
    Matrix x(1, 2, std::vector<double>{0, 1});
    const auto enc = encode_hard(x, bank, subspace_layout(1, 1), Metric::l2_squared);
    CHECK_THROWS_AS(refit_lut(LutPQ(1, 1, 3), enc, Matrix(1, 2), 0.0), NumericError);
    CHECK_THROWS_AS(refit_lut(LutPQ(1, 1, 3), enc, Matrix(1, 2), -1.0), ArgumentError);
    CHECK_THROWS_AS(refit_lut(LutPQ(1, 1, 3), enc, Matrix(2, 2), 1.0), ShapeError);
    CHECK_NOTHROW(refit_lut(LutPQ(1, 1, 3), enc, Matrix(1, 2), 0.1));
}

TEST_CASE("corrector gradient matches finite differences") {
    std::mt19937_64 rng(12);
    const Matrix f = oracle::random_matrix(15, 4, rng);
    const Matrix r = oracle::random_matrix(15, 3, rng);
    CorrectorOptions opt;
    opt.epochs = 3;
    auto c = fit_corrector(f, r, 5, opt).corrector;
    auto params = flatten_parameters(c);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (double& p : params) p += u(rng);
    assign_parameters(c, params);
    const auto grad = corrector_loss(c, f, r).gradient;
    REQUIRE(grad.size() == c.parameter_count());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double num = oracle::central_difference(
            [&](double h) {
                auto p = params;
                p[i] += h;
                Corrector tmp = c;
                assign_parameters(tmp, p);
                return corrector_loss(tmp, f, r).loss;
            },
            1e-6);
        CHECK(grad[i] == doctest::Approx(num).epsilon(1e-5).scale(1e-6));
    }
}

TEST_CASE("corrector trained on zero residuals stays near zero") {
    std::mt19937_64 rng(14);
    const Matrix f = oracle::random_matrix(30, 6, rng);
    const auto fit = fit_corrector(f, Matrix(30, 2), 4);
    for (std::size_t i = 0; i < 30; ++i) {
        const auto out = apply_corrector(fit.corrector, f.row(i));
        CHECK(std::hypot(out[0], out[1]) <= 1e-3);
    }
}

TEST_CASE("corrector learns a realizable linear residual") {
    std::mt19937_64 rng(15);
    const Matrix f = oracle::random_matrix(60, 4, rng, 0.0, 1.0);
    Matrix r(60, 2);
    for (std::size_t i = 0; i < 60; ++i) {
        r(i, 0) = 0.3 * f(i, 0) - 0.2 * f(i, 2);
        r(i, 1) = 0.1 * f(i, 1) + 0.25 * f(i, 3);
    }
    CorrectorOptions opt;
    opt.lr = 0.05;
    opt.epochs = 2000;
    const auto fit = fit_corrector(f, r, 4, opt);
    for (std::size_t t = 1; t < fit.loss_history.size(); ++t)
        CHECK(fit.loss_history[t] <= fit.loss_history[t - 1] + 1e-15);
    CHECK(fit.loss_history.back() < 0.1 * fit.loss_history.front());
}

TEST_CASE("corrector fitting errors and determinism") {
    std::mt19937_64 rng(16);
    const Matrix f = oracle::random_matrix(10, 3, rng);
    const Matrix r = oracle::random_matrix(10, 2, rng);
    CHECK_THROWS_AS(fit_corrector(f, r, 0), ArgumentError);
    CHECK_THROWS_AS(fit_corrector(Matrix(0, 3), Matrix(0, 2), 2), ArgumentError);
    CorrectorOptions bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(fit_corrector(f, r, 2, bad), ArgumentError);
    CHECK_THROWS_AS(fit_corrector(f, Matrix(9, 2), 2), ShapeError);
    CorrectorOptions opt;
    opt.batch_size = 3;
    opt.seed = 5;
    const auto a = fit_corrector(f, r, 3, opt), b = fit_corrector(f, r, 3, opt);
    CHECK(flatten_parameters(a.corrector) == flatten_parameters(b.corrector));
    CHECK(a.loss_history == b.loss_history);
}

TEST_CASE("distance features need stored distances") {
    const auto bank = line_bank();
    Matrix x(2, 3);
    const auto lay = subspace_layout(2, 2);
    CHECK_THROWS_AS(distance_features(encode_hard(x, bank, lay, Metric::l2_squared)), ArgumentError);
    const Matrix feats = distance_features(encode_hard(x, bank, lay, Metric::l2_squared, true));
    CHECK(feats.rows() == 3);
    CHECK(feats.cols() == 3);
    CHECK(feats(0, 2) == 8.0);
}
