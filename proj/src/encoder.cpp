#include "pqa/encoder.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "pqa/errors.hpp"

namespace pqa {

namespace {

std::size_t same_pad_before(std::size_t in, std::size_t out, std::size_t k, std::size_t stride) {
    const std::size_t needed = (out - 1) * stride + k;
    return needed > in ? (needed - in) / 2 : 0;
}

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return std::mt19937_64(seq);
}

void check_bank_layout(const PrototypeBank& bank, const SubspaceLayout& layout) {
    if (bank.n_s != layout.n_s || bank.l_s != layout.l_s) {
        std::ostringstream msg;
        msg << "prototype bank (" << bank.n_s << " subspaces of length " << bank.l_s << ") does not match layout ("
            << layout.n_s << " x " << layout.l_s << ")";
        throw ShapeError(msg.str());
    }
}

void check_input_rows(const Matrix& x, const SubspaceLayout& layout) {
    if (x.rows() != layout.a && x.rows() != layout.padded_rows()) {
        std::ostringstream msg;
        msg << "unrolled input has " << x.rows() << " rows, expected " << layout.a << " or "
            << layout.padded_rows();
        throw ShapeError(msg.str());
    }
}

}  // namespace

Matrix unroll_im2col(const Tensor3& input, const LayerSpec& layer) {
    validate(layer);
    if (input.channels != layer.c_in || input.height != layer.in_h || input.width != layer.in_w) {
        std::ostringstream msg;
        msg << "layer '" << layer.name << "' expects input " << layer.c_in << "x" << layer.in_h << "x" << layer.in_w
            << ", got " << input.channels << "x" << input.height << "x" << input.width;
        throw ShapeError(msg.str());
    }
    const std::size_t out_h = layer.out_h();
    const std::size_t out_w = layer.out_w();
    const std::size_t cg = layer.c_in / layer.groups;
    const std::size_t a = layer.k_h * layer.k_w * cg;
    const std::size_t pad_top = same_pad_before(layer.in_h, out_h, layer.k_h, layer.stride);
    const std::size_t pad_left = same_pad_before(layer.in_w, out_w, layer.k_w, layer.stride);

    Matrix x(a * layer.groups, out_h * out_w);
    for (std::size_t g = 0; g < layer.groups; ++g) {
        for (std::size_t kr = 0; kr < layer.k_h; ++kr) {
            for (std::size_t kc = 0; kc < layer.k_w; ++kc) {
                for (std::size_t ch = 0; ch < cg; ++ch) {
                    const std::size_t row = g * a + (kr * layer.k_w + kc) * cg + ch;
                    const std::size_t in_c = g * cg + ch;
                    for (std::size_t oy = 0; oy < out_h; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * layer.stride + kr) -
                                                  static_cast<std::ptrdiff_t>(pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(layer.in_h)) continue;
                        for (std::size_t ox = 0; ox < out_w; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * layer.stride + kc) -
                                                      static_cast<std::ptrdiff_t>(pad_left);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(layer.in_w)) continue;
                            x(row, oy * out_w + ox) = input.at(in_c, static_cast<std::size_t>(iy),
                                                               static_cast<std::size_t>(ix));
                        }
                    }
                }
            }
        }
    }
    return x;
}

Matrix unroll_weights(std::span<const double> weights, const LayerSpec& layer) {
    validate(layer);
    const std::size_t cg = layer.c_in / layer.groups;
    const std::size_t a = layer.k_h * layer.k_w * cg;
    if (weights.size() != layer.c_out * a) {
        std::ostringstream msg;
        msg << "layer '" << layer.name << "' expects " << layer.c_out * a << " weights, got " << weights.size();
        throw ShapeError(msg.str());
    }
    Matrix w(layer.c_out, a);
    for (std::size_t o = 0; o < layer.c_out; ++o) {
        for (std::size_t ch = 0; ch < cg; ++ch) {
            for (std::size_t kr = 0; kr < layer.k_h; ++kr) {
                for (std::size_t kc = 0; kc < layer.k_w; ++kc) {
                    w(o, (kr * layer.k_w + kc) * cg + ch) = weights[((o * cg + ch) * layer.k_h + kr) * layer.k_w + kc];
                }
            }
        }
    }
    return w;
}

Tensor3 roll_output(const Matrix& output, const LayerSpec& layer) {
    const std::size_t out_h = layer.out_h();
    const std::size_t out_w = layer.out_w();
    if (output.rows() != layer.c_out || output.cols() != out_h * out_w) {
        throw ShapeError("layer '" + layer.name + "': output matrix does not match the layer's output plane");
    }
    Tensor3 t(layer.c_out, out_h, out_w);
    std::copy(output.data().begin(), output.data().end(), t.data.begin());
    return t;
}

void gather_subvector(const Matrix& x, const SubspaceLayout& layout, std::size_t n, std::size_t j,
                      std::span<double> out) {
    const std::size_t base = n * layout.l_s;
    for (std::size_t k = 0; k < layout.l_s; ++k) {
        const std::size_t r = base + k;
        out[k] = r < layout.a && r < x.rows() ? x(r, j) : 0.0;
    }
}

double distance(std::span<const double> x, std::span<const double> b, Metric metric) {
    double acc = 0.0;
    if (metric == Metric::l2_squared) {
        for (std::size_t k = 0; k < x.size(); ++k) {
            const double d = x[k] - b[k];
            acc += d * d;
        }
    } else {
        for (std::size_t k = 0; k < x.size(); ++k) acc += std::abs(x[k] - b[k]);
    }
    return acc;
}

std::vector<double> compute_distances(std::span<const double> x_sub, const PrototypeBank& bank, std::size_t n,
                                      Metric metric) {
    if (x_sub.size() != bank.l_s) throw ShapeError("sub-vector length does not match the prototype length");
    if (n >= bank.n_s) throw ShapeError("subspace index out of range");
    std::vector<double> d(bank.n_p);
    for (std::size_t p = 0; p < bank.n_p; ++p) d[p] = distance(x_sub, bank.prototype(n, p), metric);
    return d;
}

EncodingResult encode_hard(const Matrix& x, const PrototypeBank& bank, const SubspaceLayout& layout, Metric metric,
                           bool keep_distances) {
    check_bank_layout(bank, layout);
    check_input_rows(x, layout);
    EncodingResult enc;
    enc.n_s = layout.n_s;
    enc.n_p = bank.n_p;
    enc.cols = x.cols();
    enc.indices.assign(enc.n_s * enc.cols, 0);
    if (keep_distances) enc.distances.emplace(enc.n_s * enc.cols * enc.n_p);

    std::vector<double> sub(layout.l_s);
    for (std::size_t n = 0; n < layout.n_s; ++n) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            gather_subvector(x, layout, n, j, sub);
            double best = std::numeric_limits<double>::infinity();
            std::uint32_t best_p = 0;
            for (std::size_t p = 0; p < bank.n_p; ++p) {
                const double d = distance(sub, bank.prototype(n, p), metric);
                if (keep_distances) (*enc.distances)[(n * enc.cols + j) * enc.n_p + p] = d;
                if (d < best) {
                    best = d;
                    best_p = static_cast<std::uint32_t>(p);
                }
            }
            enc.indices[n * enc.cols + j] = best_p;
        }
    }
    return enc;
}

EncodingResult encode_soft(const Matrix& x, const PrototypeBank& bank, const SubspaceLayout& layout, Metric metric,
                           double tau) {
    if (!(tau > 0.0)) throw ArgumentError("encode_soft: tau must be > 0");
    EncodingResult enc = encode_hard(x, bank, layout, metric, true);
    const auto& dist = *enc.distances;
    std::vector<double> weights(dist.size());
    Matrix soft(x.rows(), x.cols());

    for (std::size_t n = 0; n < enc.n_s; ++n) {
        for (std::size_t j = 0; j < enc.cols; ++j) {
            const std::size_t base = (n * enc.cols + j) * enc.n_p;
            const double dmin = dist[base + enc.index(n, j)];
            double total = 0.0;
            for (std::size_t p = 0; p < enc.n_p; ++p) {
                weights[base + p] = std::exp(-(dist[base + p] - dmin) / tau);
                total += weights[base + p];
            }
            for (std::size_t p = 0; p < enc.n_p; ++p) weights[base + p] /= total;

            for (std::size_t k = 0; k < layout.l_s; ++k) {
                const std::size_t r = n * layout.l_s + k;
                if (r >= x.rows()) break;
                double v = 0.0;
                for (std::size_t p = 0; p < enc.n_p; ++p) v += weights[base + p] * bank.prototype(n, p)[k];
                soft(r, j) = v;
            }
        }
    }
    enc.weights = std::move(weights);
    enc.soft_matrix = std::move(soft);
    return enc;
}

namespace {

struct SubspaceFit {
    std::vector<double> centroids;  // n_p x l_s
    std::vector<double> history;
    std::size_t iterations = 0;
};

double sq_dist(const double* a, const double* b, std::size_t len) {
    double acc = 0.0;
    for (std::size_t k = 0; k < len; ++k) {
        const double d = a[k] - b[k];
        acc += d * d;
    }
    return acc;
}

// Assigns every point to its nearest centroid; returns the summed cost.
double assign(const std::vector<double>& points, std::size_t m, std::size_t len, const std::vector<double>& centroids,
              std::size_t k, std::vector<std::uint32_t>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = sq_dist(&points[i * len], &centroids[c * len], len);
            if (d < best) {
                best = d;
                best_c = static_cast<std::uint32_t>(c);
            }
        }
        labels[i] = best_c;
        total += best;
    }
    return total;
}

double cost(const std::vector<double>& points, std::size_t m, std::size_t len, const std::vector<double>& centroids,
            const std::vector<std::uint32_t>& labels) {
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) total += sq_dist(&points[i * len], &centroids[labels[i] * len], len);
    return total;
}

SubspaceFit fit_subspace(const std::vector<double>& points, std::size_t m, std::size_t len, std::size_t k,
                         const FitOptions& options, std::uint64_t stream) {
    auto rng = make_rng(options.seed, stream);
    SubspaceFit fit;
    fit.centroids.assign(k * len, 0.0);
    const std::size_t seeded = std::min(k, m);

    std::uniform_int_distribution<std::size_t> pick(0, m - 1);
    if (options.init == InitMethod::random_samples) {
        std::vector<std::size_t> order(m);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t c = 0; c < seeded; ++c) {
            std::copy_n(&points[order[c] * len], len, &fit.centroids[c * len]);
        }
    } else {
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::vector<double> d2(m, std::numeric_limits<double>::infinity());
        std::size_t chosen = pick(rng);
        for (std::size_t c = 0; c < seeded; ++c) {
            std::copy_n(&points[chosen * len], len, &fit.centroids[c * len]);
            double total = 0.0;
            for (std::size_t i = 0; i < m; ++i) {
                d2[i] = std::min(d2[i], sq_dist(&points[i * len], &fit.centroids[c * len], len));
                total += d2[i];
            }
            if (c + 1 == seeded) break;
            if (total > 0.0) {
                const double target = unit(rng) * total;
                double run = 0.0;
                chosen = m - 1;
                for (std::size_t i = 0; i < m; ++i) {
                    run += d2[i];
                    if (run > target && d2[i] > 0.0) {
                        chosen = i;
                        break;
                    }
                }
                // Rounding can leave the scan on a point with zero weight.
                while (d2[chosen] == 0.0 && chosen > 0) --chosen;
            } else {
                chosen = pick(rng);
            }
        }
    }
    if (seeded < k) {
        // Fewer samples than prototypes: perturbed copies fill the remainder.
        std::normal_distribution<double> noise(0.0, 1.0);
        for (std::size_t c = seeded; c < k; ++c) {
            const double* src = &points[(c % m) * len];
            for (std::size_t e = 0; e < len; ++e) {
                fit.centroids[c * len + e] = src[e] + 1e-6 * (1.0 + std::abs(src[e])) * noise(rng);
            }
        }
    }

    std::vector<std::uint32_t> labels(m);
    double current = assign(points, m, len, fit.centroids, k, labels);
    fit.history.push_back(current);

    std::vector<double> sums(k * len);
    std::vector<std::size_t> counts(k);
    std::vector<std::uint32_t> next_labels(m);
    for (std::size_t it = 0; it < options.max_iters; ++it) {
        std::fill(sums.begin(), sums.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (std::size_t i = 0; i < m; ++i) {
            ++counts[labels[i]];
            for (std::size_t e = 0; e < len; ++e) sums[labels[i] * len + e] += points[i * len + e];
        }
        std::vector<double> updated = fit.centroids;
        for (std::size_t c = 0; c < k; ++c) {
            if (counts[c] == 0) continue;  // empty cluster keeps its centroid
            for (std::size_t e = 0; e < len; ++e) {
                updated[c * len + e] = sums[c * len + e] / static_cast<double>(counts[c]);
            }
        }
        // The mean is the exact minimiser only up to rounding; never accept a
        // step that raises the computed cost.
        const double moved = cost(points, m, len, updated, labels);
        if (moved > current) break;
        fit.centroids = std::move(updated);
        const double reassigned = assign(points, m, len, fit.centroids, k, next_labels);
        ++fit.iterations;
        fit.history.push_back(reassigned);
        const bool stable = next_labels == labels;
        labels.swap(next_labels);
        current = reassigned;
        if (stable) break;
    }
    return fit;
}

}  // namespace

FitResult fit_prototypes(const Matrix& samples, const PQConfig& config, const SubspaceLayout& layout,
                         const FitOptions& options) {
    validate(config);
    if (samples.cols() == 0 || samples.rows() == 0) throw ArgumentError("fit_prototypes: empty sample set");
    if (config.l_s != layout.l_s) throw ShapeError("fit_prototypes: config l_s does not match layout");
    check_input_rows(samples, layout);

    const std::size_t m = samples.cols();
    const std::size_t len = layout.l_s;
    FitResult result;
    result.bank = PrototypeBank(layout.n_s, config.n_p, len);
    result.status = m < config.n_p ? FitStatus::too_few_samples : FitStatus::ok;
    result.mse_history.resize(layout.n_s);

    std::vector<double> points(m * len);
    double total = 0.0;
    for (std::size_t n = 0; n < layout.n_s; ++n) {
        for (std::size_t j = 0; j < m; ++j) gather_subvector(samples, layout, n, j, {&points[j * len], len});
        SubspaceFit fit = fit_subspace(points, m, len, config.n_p, options, n);
        std::copy(fit.centroids.begin(), fit.centroids.end(), result.bank.prototype(n, 0).begin());
        const double denom = static_cast<double>(m * len);
        for (double h : fit.history) result.mse_history[n].push_back(h / denom);
        result.iterations = std::max(result.iterations, fit.iterations);
        total += fit.history.back();
    }
    result.mse_enc = total / static_cast<double>(m * layout.a);
    return result;
}

LutPQ build_lut(const Matrix& weights, const PrototypeBank& bank, const SubspaceLayout& layout) {
    check_bank_layout(bank, layout);
    if (weights.cols() != layout.a && weights.cols() != layout.padded_rows()) {
        std::ostringstream msg;
        msg << "weight rows have length " << weights.cols() << ", expected " << layout.a;
        throw ShapeError(msg.str());
    }
    LutPQ lut(weights.rows(), layout.n_s, bank.n_p);
    for (std::size_t o = 0; o < weights.rows(); ++o) {
        for (std::size_t n = 0; n < layout.n_s; ++n) {
            const std::size_t base = n * layout.l_s;
            const std::size_t len = std::min(layout.l_s, weights.cols() - std::min(weights.cols(), base));
            for (std::size_t p = 0; p < bank.n_p; ++p) {
                const auto proto = bank.prototype(n, p);
                double acc = 0.0;
                for (std::size_t k = 0; k < len && base + k < layout.a; ++k) acc += weights(o, base + k) * proto[k];
                lut.at(o, n, p) = acc;
            }
        }
    }
    return lut;
}

LutPQ refit_lut(const LutPQ& lut, const EncodingResult& encoding, const Matrix& target_outputs, double ridge) {
    if (!(ridge >= 0.0)) throw ArgumentError("refit_lut: ridge must be >= 0");
    if (encoding.n_s != lut.n_s || encoding.n_p != lut.n_p) throw ShapeError("refit_lut: encoding does not match LUT");
    if (target_outputs.rows() != lut.c_out || target_outputs.cols() != encoding.cols) {
        throw ShapeError("refit_lut: targets must be c_out x encoded columns");
    }
    const std::size_t dim = lut.n_s * lut.n_p;
    const std::size_t m = encoding.cols;

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    std::vector<Eigen::Index> feat(lut.n_s);
    for (std::size_t j = 0; j < m; ++j) {
        for (std::size_t n = 0; n < lut.n_s; ++n) {
            feat[n] = static_cast<Eigen::Index>(n * lut.n_p + encoding.index(n, j));
        }
        for (std::size_t a = 0; a < lut.n_s; ++a) {
            for (std::size_t b = 0; b < lut.n_s; ++b) gram(feat[a], feat[b]) += 1.0;
        }
    }
    Eigen::MatrixXd rhs(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(lut.c_out));
    for (std::size_t o = 0; o < lut.c_out; ++o) {
        for (std::size_t f = 0; f < dim; ++f) {
            rhs(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(o)) = ridge * lut.values[o * dim + f];
        }
        for (std::size_t j = 0; j < m; ++j) {
            for (std::size_t n = 0; n < lut.n_s; ++n) {
                rhs(static_cast<Eigen::Index>(n * lut.n_p + encoding.index(n, j)), static_cast<Eigen::Index>(o)) +=
                    target_outputs(o, j);
            }
        }
    }
    gram.diagonal().array() += ridge;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    const auto diag = ldlt.vectorD().cwiseAbs();
    if (ldlt.info() != Eigen::Success || diag.minCoeff() <= 1e-10 * std::max(1.0, diag.maxCoeff())) {
        throw NumericError(
            "refit_lut: normal equations are singular (unoccupied prototypes or collinear subspaces); use ridge > 0");
    }
    const Eigen::MatrixXd solution = ldlt.solve(rhs);

    LutPQ refit = lut;
    for (std::size_t o = 0; o < lut.c_out; ++o) {
        for (std::size_t f = 0; f < dim; ++f) {
            refit.values[o * dim + f] = solution(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(o));
        }
    }
    return refit;
}

Matrix distance_features(const EncodingResult& encoding) {
    if (!encoding.distances) throw ArgumentError("distance_features: encoding was computed without distances");
    const std::size_t width = encoding.n_s * encoding.n_p;
    Matrix features(encoding.cols, width);
    const auto& dist = *encoding.distances;
    for (std::size_t j = 0; j < encoding.cols; ++j) {
        for (std::size_t n = 0; n < encoding.n_s; ++n) {
            for (std::size_t p = 0; p < encoding.n_p; ++p) {
                features(j, n * encoding.n_p + p) = dist[(n * encoding.cols + j) * encoding.n_p + p];
            }
        }
    }
    return features;
}

namespace {

// Forward pass for one sample; keeps the hidden activations for backprop.
void corrector_forward(const Corrector& c, std::span<const double> features, std::vector<double>& normed,
                       std::vector<double>& hidden, std::span<double> out) {
    for (std::size_t i = 0; i < c.in_dim; ++i) normed[i] = (features[i] - c.in_mean[i]) * c.in_scale[i];
    for (std::size_t h = 0; h < c.hidden; ++h) {
        double acc = c.b1[h];
        const double* row = &c.w1[h * c.in_dim];
        for (std::size_t i = 0; i < c.in_dim; ++i) acc += row[i] * normed[i];
        hidden[h] = std::tanh(acc);
    }
    for (std::size_t o = 0; o < c.out_dim; ++o) {
        double acc = c.b2[o];
        const double* row = &c.w2[o * c.hidden];
        for (std::size_t h = 0; h < c.hidden; ++h) acc += row[h] * hidden[h];
        out[o] = acc;
    }
}

// Accumulates d(loss)/d(params) for rows [begin, end) with the given scale.
double accumulate_gradient(const Corrector& c, const Matrix& features, const Matrix& residuals,
                           std::span<const std::size_t> rows, double scale, std::vector<double>& grad) {
    std::vector<double> normed(c.in_dim), hidden(c.hidden), out(c.out_dim), dh(c.hidden);
    const std::size_t off_b1 = c.w1.size();
    const std::size_t off_w2 = off_b1 + c.b1.size();
    const std::size_t off_b2 = off_w2 + c.w2.size();
    double loss = 0.0;
    for (std::size_t r : rows) {
        corrector_forward(c, features.row(r), normed, hidden, out);
        std::fill(dh.begin(), dh.end(), 0.0);
        for (std::size_t o = 0; o < c.out_dim; ++o) {
            const double err = out[o] - residuals(r, o);
            loss += err * err;
            const double g = 2.0 * err * scale;
            grad[off_b2 + o] += g;
            for (std::size_t h = 0; h < c.hidden; ++h) {
                grad[off_w2 + o * c.hidden + h] += g * hidden[h];
                dh[h] += g * c.w2[o * c.hidden + h];
            }
        }
        for (std::size_t h = 0; h < c.hidden; ++h) {
            const double dz = dh[h] * (1.0 - hidden[h] * hidden[h]);
            grad[off_b1 + h] += dz;
            double* row = &grad[h * c.in_dim];
            for (std::size_t i = 0; i < c.in_dim; ++i) row[i] += dz * normed[i];
        }
    }
    return loss * scale;
}

void check_corrector_data(const Corrector& c, const Matrix& features, const Matrix& residuals) {
    if (features.cols() != c.in_dim) throw ShapeError("corrector: feature width does not match n_s * n_p");
    if (residuals.cols() != c.out_dim || residuals.rows() != features.rows()) {
        throw ShapeError("corrector: residuals must be samples x c_out");
    }
}

}  // namespace

std::vector<double> flatten_parameters(const Corrector& c) {
    std::vector<double> params;
    params.reserve(c.parameter_count());
    params.insert(params.end(), c.w1.begin(), c.w1.end());
    params.insert(params.end(), c.b1.begin(), c.b1.end());
    params.insert(params.end(), c.w2.begin(), c.w2.end());
    params.insert(params.end(), c.b2.begin(), c.b2.end());
    return params;
}

void assign_parameters(Corrector& c, std::span<const double> params) {
    if (params.size() != c.parameter_count()) throw ShapeError("corrector: parameter vector has the wrong length");
    auto it = params.begin();
    for (auto* part : {&c.w1, &c.b1, &c.w2, &c.b2}) {
        std::copy_n(it, part->size(), part->begin());
        it += static_cast<std::ptrdiff_t>(part->size());
    }
}

CorrectorLoss corrector_loss(const Corrector& c, const Matrix& features, const Matrix& residuals) {
    check_corrector_data(c, features, residuals);
    CorrectorLoss result;
    result.gradient.assign(c.parameter_count(), 0.0);
    std::vector<std::size_t> rows(features.rows());
    std::iota(rows.begin(), rows.end(), 0);
    const double scale = 1.0 / static_cast<double>(features.rows() * c.out_dim);
    result.loss = accumulate_gradient(c, features, residuals, rows, scale, result.gradient);
    return result;
}

CorrectorFit fit_corrector(const Matrix& features, const Matrix& residuals, std::size_t hidden_dim,
                           const CorrectorOptions& options) {
    if (hidden_dim == 0) throw ArgumentError("fit_corrector: hidden_dim must be >= 1");
    if (features.rows() == 0) throw ArgumentError("fit_corrector: no training samples");
    if (!(options.lr > 0.0)) throw ArgumentError("fit_corrector: learning rate must be > 0");

    Corrector c;
    c.in_dim = features.cols();
    c.hidden = hidden_dim;
    c.out_dim = residuals.cols();
    check_corrector_data(c, features, residuals);

    const std::size_t m = features.rows();
    c.in_mean.assign(c.in_dim, 0.0);
    c.in_scale.assign(c.in_dim, 1.0);
    for (std::size_t i = 0; i < c.in_dim; ++i) {
        double mean = 0.0;
        for (std::size_t r = 0; r < m; ++r) mean += features(r, i);
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t r = 0; r < m; ++r) var += (features(r, i) - mean) * (features(r, i) - mean);
        var /= static_cast<double>(m);
        c.in_mean[i] = mean;
        c.in_scale[i] = var > 1e-24 ? 1.0 / std::sqrt(var) : 1.0;
    }

    auto rng = make_rng(options.seed, 0xC0FFEE);
    const double bound = std::sqrt(6.0 / static_cast<double>(c.in_dim + c.hidden));
    std::uniform_real_distribution<double> init(-bound, bound);
    c.w1.resize(c.hidden * c.in_dim);
    for (double& w : c.w1) w = init(rng);
    c.b1.assign(c.hidden, 0.0);
    // Zero output layer: training starts from "no correction".
    c.w2.assign(c.out_dim * c.hidden, 0.0);
    c.b2.assign(c.out_dim, 0.0);

    CorrectorFit fit;
    fit.loss_history.push_back(corrector_loss(c, features, residuals).loss);
    Corrector best = c;
    double best_loss = fit.loss_history.back();

    const std::size_t batch = options.batch_size == 0 ? m : std::min(options.batch_size, m);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> grad(c.parameter_count());
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        if (batch < m) std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < m; start += batch) {
            const std::size_t end = std::min(m, start + batch);
            std::fill(grad.begin(), grad.end(), 0.0);
            const double scale = 1.0 / static_cast<double>((end - start) * c.out_dim);
            accumulate_gradient(c, features, residuals, std::span(order).subspan(start, end - start), scale, grad);
            auto params = flatten_parameters(c);
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= options.lr * grad[i];
            assign_parameters(c, params);
        }
        const double loss = corrector_loss(c, features, residuals).loss;
        if (!std::isfinite(loss)) throw NumericError("fit_corrector: training diverged; lower the learning rate");
        fit.loss_history.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = c;
            fit.best_epoch = epoch + 1;
        }
    }
    fit.corrector = std::move(best);
    return fit;
}

std::vector<double> apply_corrector(const Corrector& corrector, std::span<const double> features) {
    if (features.size() != corrector.in_dim) throw ShapeError("apply_corrector: feature width mismatch");
    std::vector<double> normed(corrector.in_dim), hidden(corrector.hidden), out(corrector.out_dim);
    corrector_forward(corrector, features, normed, hidden, out);
    return out;
}

}  // namespace pqa
