#include "subkit/halfprec.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "subkit/rng.hpp"
#include "subkit/tape.hpp"

namespace subkit {

namespace {

constexpr double kHalfMax = 65504.0;              // largest finite binary16
constexpr double kHalfOverflow = 65520.0;         // midpoint to 2^16; rounds to infinity
constexpr double kHalfMinNormal = 0x1p-14;        // smallest normal
constexpr double kHalfSubnormalUlp = 0x1p-24;     // spacing of subnormals

}  // namespace

double round_binary16(double x) {
    if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
    const double ax = std::abs(x);
    if (ax >= kHalfOverflow) return std::copysign(std::numeric_limits<double>::infinity(), x);
    if (ax == 0.0) return x;  // preserves signed zero
    double ulp;
    if (ax < kHalfMinNormal) {
        ulp = kHalfSubnormalUlp;
    } else {
        const int e = std::ilogb(ax);  // biased grid: spacing 2^(e-10) for normals
        ulp = std::ldexp(1.0, e - 10);
    }
    // x/ulp is an exact scaling (ulp is a power of two), nearbyint is
    // round-to-nearest-even in the default rounding mode.
    return std::nearbyint(x / ulp) * ulp;
}

std::uint16_t f16_bits(double x) {
    const double r = round_binary16(x);
    if (std::isnan(r)) return 0x7E00;  // canonical quiet NaN
    const std::uint16_t sign = std::signbit(r) ? 0x8000 : 0;
    if (std::isinf(r)) return sign | 0x7C00;
    const double ar = std::abs(r);
    if (ar == 0.0) return sign;
    if (ar < kHalfMinNormal) {  // subnormal: value = mant * 2^-24
        const auto mant = static_cast<std::uint16_t>(ar / kHalfSubnormalUlp);
        return sign | mant;
    }
    const int e = std::ilogb(ar);
    const auto mant = static_cast<std::uint16_t>(ar / std::ldexp(1.0, e - 10)) & 0x3FF;
    return sign | static_cast<std::uint16_t>((e + 15) << 10) | mant;
}

double f16_value(std::uint16_t bits) {
    const double sign = (bits & 0x8000) ? -1.0 : 1.0;
    const int e = (bits >> 10) & 0x1F;
    const int mant = bits & 0x3FF;
    if (e == 0x1F)
        return mant ? std::numeric_limits<double>::quiet_NaN()
                    : sign * std::numeric_limits<double>::infinity();
    if (e == 0) return sign * static_cast<double>(mant) * kHalfSubnormalUlp;
    return sign * std::ldexp(1.0 + static_cast<double>(mant) / 1024.0, e - 15);
}

F16Tensor F16Tensor::from_tensor(const Tensor& t) {
    F16Tensor out;
    out.shape = t.shape;
    out.data.reserve(t.data.size());
    for (const double x : t.data) out.data.push_back(f16_bits(x));
    return out;
}

Tensor F16Tensor::to_tensor() const {
    Tensor out = Tensor::zeros(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = f16_value(data[i]);
    return out;
}

ParamSet round_params_f16(const ParamSet& params) {
    ParamSet out = params;
    for (const auto& name : ParamSet::names())
        for (auto& x : out.at(name).data) x = round_binary16(x);
    return out;
}

Tensor forward_f16(const ParamSet& params, const std::vector<EncodedPair>& examples,
                   const ModelConfig& cfg) {
    const ParamSet rounded = round_params_f16(params);
    Tape tape;
    tape.set_post_hook(round_binary16);
    const auto refs = forward_on_tape(tape, rounded, pack_batch(examples, cfg), cfg, Mode::kEval,
                                      nullptr);
    if (tape.saw_nonfinite())
        throw DataError("f16 overflow in layer '" + tape.first_nonfinite_label() + "'");
    return tape.val(refs.logits);
}

BenchCell bench_cell(const ParamSet& params, const ModelConfig& cfg,
                     const std::vector<EncodedPair>& enc, int batch_size, Precision precision,
                     int repeats) {
    if (repeats < 3) throw DataError("bench: repeats must be >= 3");
    if (enc.empty()) throw DataError("bench: empty dataset");
    if (batch_size < 1) throw DataError("bench: batch_size must be >= 1");
    using Clock = std::chrono::steady_clock;
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(repeats));
    double sink = 0.0;  // keeps the forward passes observable
    for (int r = 0; r < repeats; ++r) {
        const auto t0 = Clock::now();
        for (std::size_t b0 = 0; b0 < enc.size(); b0 += static_cast<std::size_t>(batch_size)) {
            const std::size_t b1 = std::min(enc.size(), b0 + static_cast<std::size_t>(batch_size));
            const std::vector<EncodedPair> chunk(enc.begin() + static_cast<std::ptrdiff_t>(b0),
                                                 enc.begin() + static_cast<std::ptrdiff_t>(b1));
            const Tensor logits = precision == Precision::kFull ? forward_logits(params, chunk, cfg)
                                                                : forward_f16(params, chunk, cfg);
            sink += logits.data[0];
        }
        times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    BenchCell cell;
    cell.seq_len = cfg.max_len;
    cell.precision = precision;
    cell.repeats = repeats;
    cell.median_seconds = times[times.size() / 2];
    cell.examples_per_second = static_cast<double>(enc.size()) / cell.median_seconds;
    if (std::isnan(sink)) throw DataError("bench: forward produced NaN");
    return cell;
}

BenchReport bench_table(const ParamSet& params, const ModelConfig& cfg, std::int64_t n_examples,
                        int batch_size, const std::vector<std::int64_t>& seq_lens, int repeats,
                        std::uint64_t seed) {
    if (n_examples < 1) throw DataError("bench: n_examples must be >= 1");
    if (seq_lens.empty()) throw DataError("bench: no sequence lengths");
    BenchReport report;
    report.n_examples = n_examples;
    report.batch_size = batch_size;
    report.repeats = repeats;
    for (const std::int64_t len : seq_lens) {
        if (len < 1) throw DataError("bench: sequence length must be >= 1");
        // full-length synthetic batches: every position is a real token, so
        // batch trimming cannot shorten the measured sequence
        ModelConfig run_cfg = cfg;
        run_cfg.max_len = len;
        Rng rng(derive_seed(seed, "bench", static_cast<std::uint64_t>(len)));
        std::vector<EncodedPair> enc(static_cast<std::size_t>(n_examples));
        for (auto& ep : enc) {
            ep.token_ids.resize(static_cast<std::size_t>(len));
            ep.mask.assign(static_cast<std::size_t>(len), 1);
            for (auto& id : ep.token_ids)
                id = static_cast<std::int32_t>(
                    rng.uniform_int(static_cast<std::uint64_t>(cfg.vocab_size)));
            ep.label = 0;
        }
        report.cells.push_back(bench_cell(params, run_cfg, enc, batch_size, Precision::kFull, repeats));
        report.cells.push_back(bench_cell(params, run_cfg, enc, batch_size, Precision::kHalf, repeats));
    }
    return report;
}

std::string BenchReport::to_text() const {
    std::ostringstream out;
    out << "inference benchmark (examples=" << n_examples << ", batch=" << batch_size
        << ", repeats=" << repeats << ")\n";
    out << "  seq_len    full_ms    half_ms    full_ex/s    half_ex/s    half/full\n";
    for (std::size_t i = 0; i + 1 < cells.size(); i += 2) {
        const BenchCell& full = cells[i];
        const BenchCell& half = cells[i + 1];
        char buf[160];
        std::snprintf(buf, sizeof buf, "  %7lld %10.2f %10.2f %12.1f %12.1f %8.2fx",
                      static_cast<long long>(full.seq_len), full.median_seconds * 1e3,
                      half.median_seconds * 1e3, full.examples_per_second,
                      half.examples_per_second,
                      half.examples_per_second / full.examples_per_second);
        out << buf << "\n";
    }
    return out.str();
}

void BenchReport::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("bench: cannot write '" + path + "'");
    out << "seq_len,precision,repeats,median_seconds,examples_per_second\n";
    for (const auto& c : cells) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%lld,%s,%d,%.17g,%.17g\n",
                      static_cast<long long>(c.seq_len),
                      c.precision == Precision::kFull ? "full" : "half", c.repeats,
                      c.median_seconds, c.examples_per_second);
        out << buf;
    }
}

}  // namespace subkit
