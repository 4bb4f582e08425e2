#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subkit/model.hpp"

namespace subkit {

// Nearest IEEE-754 binary16 value of x, returned in full precision.
// Round-to-nearest-even; overflow beyond 65504 goes to +/-infinity;
// subnormals are exact; NaN stays NaN.
double round_binary16(double x);

std::uint16_t f16_bits(double x);      // round to binary16, then encode the bit pattern
double f16_value(std::uint16_t bits);  // exact decode of a binary16 bit pattern

// Tensor stored as raw binary16 patterns (1 sign, 5 exponent, 10 mantissa).
struct F16Tensor {
    std::vector<std::int64_t> shape;
    std::vector<std::uint16_t> data;

    static F16Tensor from_tensor(const Tensor& t);
    Tensor to_tensor() const;
};

// Every parameter tensor rounded to binary16 (idempotent).
ParamSet round_params_f16(const ParamSet& params);

// Eval-mode forward pass emulating a half-precision pipeline: weights are
// rounded once, and every primitive's output is rounded to binary16 before
// the next primitive consumes it. Matmul accumulates in full precision and
// rounds the result (mixed-precision convention).
Tensor forward_f16(const ParamSet& params, const std::vector<EncodedPair>& examples,
                   const ModelConfig& cfg);

enum class Precision { kFull, kHalf };

struct BenchCell {
    std::int64_t seq_len = 0;
    Precision precision = Precision::kFull;
    int repeats = 0;
    double median_seconds = 0.0;
    double examples_per_second = 0.0;
};

struct BenchReport {
    std::int64_t n_examples = 0;
    int batch_size = 0;
    int repeats = 0;
    std::vector<BenchCell> cells;

    std::string to_text() const;  // rows = sequence lengths, columns = precisions
    void save_csv(const std::string& path) const;
};

// Times one precision at one sequence length: `repeats` timed runs over
// synthetic full-length batches, median reported.
BenchCell bench_cell(const ParamSet& params, const ModelConfig& cfg,
                     const std::vector<EncodedPair>& enc, int batch_size, Precision precision,
                     int repeats);

// Full benchmark table over sequence lengths x {full, half}.
BenchReport bench_table(const ParamSet& params, const ModelConfig& cfg, std::int64_t n_examples,
                        int batch_size, const std::vector<std::int64_t>& seq_lens, int repeats,
                        std::uint64_t seed);

}  // namespace subkit
