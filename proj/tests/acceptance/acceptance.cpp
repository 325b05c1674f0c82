// Acceptance checks. Each criterion prints one PASS/FAIL line; the exit code
// is non-zero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>

#include "oracles.hpp"
#include "pqa/pipeline.hpp"

using namespace pqa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

HwConfig table_hw(MemoryKind mem) {
    HwConfig hw;
    hw.nout_vec = 32;
    hw.mem_bw_bytes_per_s = memory_spec(mem).bytes_per_s;
    return hw;
}

Outcome parameter_counts() {
    struct Case {
        const char* model;
        std::size_t l_s, n_p;
        double target;
    };
    const Case cases[] = {{"resnet20", 9, 16, 476e3}, {"resnet20", 9, 8, 239e3},   {"micronet_kws", 4, 16, 212e3},
                          {"micronet_kws", 8, 8, 63e3}, {"dw_emnist", 4, 12, 3.1e6}, {"dw_emnist", 8, 8, 1.1e6}};
    Outcome o{true, ""};
    for (const auto& c : cases) {
        const Model m = with_uniform_pq(zoo_model(c.model), PQConfig{c.n_p, c.l_s});
        const double got = static_cast<double>(memory_footprint(m, ParamConvention::lut_plus_dense));
        const double dev = std::abs(got / c.target - 1.0);
        const bool ok = dev <= 0.01;
        o.pass = o.pass && ok;
        o.detail += std::string(o.detail.empty() ? "" : "; ") + c.model + " {" + std::to_string(c.l_s) + "," +
                    std::to_string(c.n_p) + "} " + format_real(got) + " vs " + format_real(c.target) + " (" +
                    fmt("%.2f", 100 * dev) + "%" + (ok ? "" : " > 1%") + ")";
    }
    return o;
}

Outcome cycle_counts() {
    const Model m = with_uniform_pq(zoo_model("resnet20"), PQConfig{16, 9});
    const auto hbm = network_report(m, table_hw(MemoryKind::hbm));
    const auto ddr = network_report(m, table_hw(MemoryKind::ddr4));
    const double lat = latency_us(hbm.total_cycles, 490e6);
    const double ddr_dev = static_cast<double>(ddr.total_cycles) / 17150.0 - 1.0;
    Outcome o;
    o.pass = hbm.total_cycles == 11776 && std::abs(lat / 24.0 - 1.0) <= 0.05 && std::abs(ddr_dev) <= 0.20;
    o.detail = "HBM " + std::to_string(hbm.total_cycles) + " cycles, " + fmt("%.2f", lat) + " us; DDR4 " +
               std::to_string(ddr.total_cycles) + " cycles (" + fmt("%+.1f", 100 * ddr_dev) + "% vs 17150)";
    return o;
}

Outcome footprint_blowup() {
    const Model m = with_uniform_pq(zoo_model("resnet20"), PQConfig{64, 4});
    const double params = static_cast<double>(memory_footprint(m, ParamConvention::lut_plus_dense));
    // Formula cross-check: dense layers plus N_s * N_p * C_out per PQ layer.
    double formula = 0;
    for (const auto& l : m.layers) {
        const auto d = derive_unrolled_dims(l.spec);
        formula += l.spec.pq_enabled ? std::ceil(static_cast<double>(d.a) / 4.0) * 64.0 * static_cast<double>(d.c_out)
                                     : static_cast<double>(dense_parameter_count(l.spec));
    }
    const double ratio = params / 269e3;
    return {ratio >= 15.0 && formula == params,
            format_real(params) + " params = " + fmt("%.2f", ratio) + "x the 269K dense baseline"};
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> ua(1, 16), up(1, 8), uo(1, 8), ul(1, 4), uc(1, 16);
    double worst = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        const std::size_t a = ua(rng), n_p = up(rng), c_out = uo(rng), l_s = std::min(ul(rng), a), cols = uc(rng);
        const auto lay = subspace_layout(a, l_s);
        auto bank = oracle::random_bank(lay.n_s, n_p, l_s, rng);
        const Matrix w = oracle::random_matrix(c_out, a, rng);
        LayerSpec spec;
        spec.name = "rand";
        spec.kind = LayerKind::linear;
        spec.c_in = a;
        spec.c_out = c_out;
        spec.pq_enabled = true;
        const auto rt = make_runtime(spec, PQConfig{n_p, l_s}, bank, build_lut(w, bank, lay));
        const Matrix x = oracle::random_matrix(a, cols, rng);
        const Matrix got = pq_forward(x, rt);
        const Matrix want = oracle::brute_force_pq(x, w, bank);
        for (std::size_t i = 0; i < got.size(); ++i) {
            const double d = std::abs(got.data()[i] - want.data()[i]) / std::max(1.0, std::abs(want.data()[i]));
            worst = std::max(worst, d);
        }
    }
    return {worst <= 1e-6, std::to_string(trials) + " random layers, worst relative deviation " + fmt("%.3g", worst)};
}

Outcome soft_to_hard() {
    std::mt19937_64 rng(77);
    std::size_t checked = 0, agree = 0, skipped = 0;
    while (checked < 20000) {
        const auto bank = oracle::random_bank(4, 8, 3, rng);
        const auto lay = subspace_layout(12, 3);
        const Matrix x = oracle::random_matrix(12, 100, rng);
        for (auto metric : {Metric::l2_squared, Metric::l1}) {
            const auto hard = encode_hard(x, bank, lay, metric, true);
            const auto soft = encode_soft(x, bank, lay, metric, 1e-6);
            for (std::size_t n = 0; n < 4; ++n)
                for (std::size_t j = 0; j < 100; ++j) {
                    const std::size_t base = (n * 100 + j) * 8;
                    std::vector<double> d(hard.distances->begin() + static_cast<std::ptrdiff_t>(base),
                                          hard.distances->begin() + static_cast<std::ptrdiff_t>(base + 8));
                    std::sort(d.begin(), d.end());
                    if (d[1] - d[0] <= 1e-9) {
                        ++skipped;
                        continue;
                    }
                    const double* wts = soft.weights->data() + base;
                    ++checked;
                    agree += static_cast<std::size_t>(std::max_element(wts, wts + 8) - wts) == hard.index(n, j);
                }
        }
    }
    return {agree == checked, std::to_string(agree) + "/" + std::to_string(checked) +
                                  " tie-free columns agree at tau=1e-6 (" + std::to_string(skipped) + " near-ties skipped)"};
}

Outcome kmeans_contract() {
    std::mt19937_64 rng(5);
    std::size_t violations = 0, steps = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix x = oracle::random_matrix(10, 120, rng);
        FitOptions opt;
        opt.seed = seed;
        opt.max_iters = 30;
        const auto fit = fit_prototypes(x, PQConfig{8, 3}, subspace_layout(10, 3), opt);
        for (const auto& h : fit.mse_history)
            for (std::size_t t = 1; t < h.size(); ++t, ++steps) violations += h[t] > h[t - 1];
    }
    const Matrix x = oracle::random_matrix(9, 500, rng, -3, 5);
    const auto one = fit_prototypes(x, PQConfig{1, 3}, subspace_layout(9, 3));
    double worst = 0;
    for (std::size_t r = 0; r < 9; ++r) {
        long double mean = 0;
        for (std::size_t j = 0; j < 500; ++j) mean += x(r, j);
        mean /= 500;
        worst = std::max(worst, std::abs(one.bank.prototype(r / 3, 0)[r % 3] - static_cast<double>(mean)));
    }
    return {violations == 0 && worst <= 1e-12, "100 seeded runs, " + std::to_string(steps) + " iteration steps, " +
                                                    std::to_string(violations) + " increases; N_p=1 mean error " +
                                                    fmt("%.2g", worst)};
}

Outcome quant_properties() {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1, 1);
    // Round trip.
    double worst_ratio = 0;
    for (int t = 0; t < 500; ++t) {
        std::vector<double> v(32);
        for (double& x : v) x = u(rng) * std::pow(10.0, t % 5);
        const auto p = calibrate(v, 2 + t % 15,
                                 t % 3 ? Calibration{} : Calibration{CalibrationKind::percentile, 30, 70});
        for (int k = 0; k < 64; ++k) {
            const double x = u(rng) * std::pow(10.0, t % 5) * 2;
            worst_ratio = std::max(worst_ratio, std::abs(dequantize(quantize(x, p), p) - std::clamp(x, p.lo, p.hi)) /
                                                    p.scale);
        }
    }
    // Granularity ordering on 100x per-subspace range disparity.
    auto bank = oracle::random_bank(4, 8, 4, rng);
    for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t i = 0; i < 32; ++i) bank.values[n * 32 + i] *= std::pow(100.0, static_cast<double>(n) / 1.5);
    LayerSpec spec;
    spec.name = "q";
    spec.kind = LayerKind::linear;
    spec.c_in = 16;
    spec.c_out = 4;
    spec.pq_enabled = true;
    const auto lay = subspace_layout(16, 4);
    const auto rt = make_runtime(spec, PQConfig{8, 4}, bank, build_lut(oracle::random_matrix(4, 16, rng), bank, lay));
    auto other_bank = oracle::random_bank(4, 8, 4, rng);
    for (double& v : other_bank.values) v *= 1e3;
    LayerSpec spec2 = spec;
    spec2.name = "q2";
    const auto rt2 = make_runtime(spec2, PQConfig{8, 4}, other_bank,
                                  build_lut(oracle::random_matrix(4, 16, rng), other_bank, lay));
    const std::vector<PQLayerRuntime> both{rt, rt2};
    const std::vector<Matrix> calib(2);
    bool ordered = true;
    for (unsigned bits : {4u, 8u, 16u}) {
        QuantScheme s;
        s.proto_bits = s.lut_bits = bits;
        s.granularity = Granularity::per_subspace;
        const auto sub = quantize_runtimes(both, s, calib)[0];
        s.granularity = Granularity::per_layer;
        const auto layer = quantize_runtimes(both, s, calib)[0];
        s.granularity = Granularity::global;
        const auto global = quantize_runtimes(both, s, calib)[0];
        for (std::size_t n = 0; n < 4; ++n) {
            ordered = ordered &&
                      sub.proto_param(n).max_round_trip_error() <= layer.proto_param(n).max_round_trip_error() &&
                      layer.proto_param(n).max_round_trip_error() <= global.proto_param(n).max_round_trip_error() &&
                      sub.lut_param(n).max_round_trip_error() <= layer.lut_param(n).max_round_trip_error() &&
                      layer.lut_param(n).max_round_trip_error() <= global.lut_param(n).max_round_trip_error();
        }
    }
    // Bits monotonicity of the bound.
    bool monotone = true;
    std::vector<double> vals(bank.values.begin(), bank.values.end());
    double prev = INFINITY;
    for (unsigned bits = 2; bits <= 16; ++bits) {
        const double b = calibrate(vals, bits).max_round_trip_error();
        monotone = monotone && b <= prev;
        prev = b;
    }
    return {worst_ratio <= 0.5 * (1 + 1e-9) && ordered && monotone,
            "worst round trip " + fmt("%.6f", worst_ratio) + " steps; granularity order " +
                (ordered ? "holds" : "broken") + "; bound monotone in bits " + (monotone ? "yes" : "no")};
}

Outcome flops_formulas() {
    double worst_closed = 0, worst_exact = 0;
    for (std::size_t n_s = 50; n_s <= 400; n_s += 7)
        for (std::size_t c_out : {8u, 16u, 64u, 256u, 512u})
            for (std::size_t n_p : {4u, 16u, 64u})
                for (std::size_t l_s : {1u, 4u, 9u, 16u}) {
                    const auto f = flops_footprint({n_s * l_s, 13, c_out}, PQConfig{n_p, l_s});
                    worst_closed = std::max(worst_closed, std::abs(flops_ratio_closed_form(c_out, n_p, l_s) / f.ratio - 1));
                    worst_exact = std::max(worst_exact, std::abs(flops_ratio_exact(n_s, c_out, n_p, l_s) / f.ratio - 1));
                }
    const double slow = flops_ratio_closed_form(16, 16, 8);
    return {worst_closed <= 0.02 && worst_exact <= 1e-12 && slow < 1.0,
            "closed form within " + fmt("%.3f", 100 * worst_closed) + "% for N_s>=50, exact form within " +
                fmt("%.1e", worst_exact) + "; C_out=16,N_p=16,L_s=8 ratio " + fmt("%.2f", slow)};
}

Outcome sweep_soundness() {
    const auto recs = sweep(heatmap_grid());
    std::map<std::pair<std::size_t, std::size_t>, std::pair<std::set<std::pair<std::size_t, std::size_t>>,
                                                            std::set<std::pair<std::size_t, std::size_t>>>>
        planes;
    for (const auto& r : recs) {
        auto& plane = planes[{r.n_p, r.l_s}];
        if (r.cycles.memory_bound)
            (r.memory.kind == MemoryKind::hbm ? plane.first : plane.second).insert({r.in_size, r.channels});
    }
    std::size_t bad = 0, hbm_cells = 0, ddr_cells = 0;
    for (const auto& [key, sets] : planes) {
        for (const auto& c : sets.first) bad += sets.second.count(c) == 0;
        hbm_cells += sets.first.size();
        ddr_cells += sets.second.size();
    }
    return {bad == 0, std::to_string(planes.size()) + " (N_p, L_s) planes; memory-bound cells HBM " +
                          std::to_string(hbm_cells) + " vs DDR4 " + std::to_string(ddr_cells) + ", " +
                          std::to_string(bad) + " outside the DDR4 set"};
}

std::string tree_digest(const fs::path& dir) {
    std::string all;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        all += f.filename().string() + '\0';
        all.append(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return all;
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / "pqa_acceptance_determinism";
    std::vector<std::string> digests;
    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<Tensor3> samples;
    for (int i = 0; i < 2; ++i) {
        Tensor3 t(1, 10, 49);
        for (double& v : t.data) v = u(rng);
        samples.push_back(t);
    }
    for (int run = 0; run < 2; ++run) {
        const fs::path dir = root / ("run" + std::to_string(run));
        fs::remove_all(dir);
        RunConfig cfg;
        cfg.out_dir = dir.string();
        cfg.seed = 123;
        cfg.pq = PQConfig{8, 8};
        cfg.fit.max_columns = 256;
        cfg.fit.ridge = 0.1;
        cfg.fit.corrector_hidden = 4;
        cfg.fit.corrector_epochs = 10;
        cmd_fit(zoo_model("micronet_kws"), samples, cfg);
        digests.push_back(tree_digest(dir));
    }
    const std::string s1 = cmd_sweep(heatmap_grid()), s2 = cmd_sweep(heatmap_grid());
    fs::remove_all(root);
    const bool fit_same = digests[0] == digests[1];
    return {fit_same && s1 == s2, std::string("fit artifacts ") + (fit_same ? "identical" : "differ") + " (" +
                                      std::to_string(digests[0].size()) + " bytes); sweep CSV " +
                                      (s1 == s2 ? "identical" : "differs") + " (" + std::to_string(s1.size()) +
                                      " bytes)"};
}

struct Criterion {
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {"parameter counts of the six PQ configurations", 1.0, parameter_counts},
        {"cycles per image and latency", 1.0, cycle_counts},
        {"footprint blow-up at N_p=64, L_s=4", 1.0, footprint_blowup},
        {"pq forward equals the brute-force oracle", 30.0, oracle_equivalence},
        {"soft encoding converges to hard encoding", 10.0, soft_to_hard},
        {"k-means contract", 0.0, kmeans_contract},
        {"quantization properties", 0.0, quant_properties},
        {"FLOPs formulas", 0.0, flops_formulas},
        {"sweep memory-bound soundness", 0.0, sweep_soundness},
        {"determinism of fit and sweep", 0.0, determinism},
    };
    std::size_t only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--criterion") == 0 && i + 1 < argc) {
            only = std::stoul(argv[++i]);
        } else {
            std::fprintf(stderr, "usage: %s [--criterion N]\n", argv[0]);
            return 1;
        }
    }
    if (only > criteria.size()) {
        std::fprintf(stderr, "criterion must be in [1, %zu]\n", criteria.size());
        return 1;
    }
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only && only != i + 1) continue;
        const auto& c = criteria[i];
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = c.budget_s <= 0.0 || secs < c.budget_s;
        if (!in_time) o.detail += "; over the " + format_real(c.budget_s) + " s budget";
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::printf("%s criterion %zu: %s: %s [%.3f s]\n", pass ? "PASS" : "FAIL", i + 1, c.name, o.detail.c_str(),
                    secs);
    }
    return failures ? 1 : 0;
}
