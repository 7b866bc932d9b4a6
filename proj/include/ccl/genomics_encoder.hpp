#pragma once

#include <ccl/parameters.hpp>

#include <random>
#include <string>
#include <vector>

namespace ccl {

inline constexpr Index kModelDim = 256;

// Six independent two-layer SELU stacks (len_i -> 256 -> 256) whose outputs
// are concatenated and aggregated by fc1 (6*256 -> 256) into F_g.
class GenomicsEncoder {
   public:
    GenomicsEncoder() = default;
    GenomicsEncoder(ParameterStore& store, const std::vector<std::size_t>& subseq_lens, std::mt19937_64& rng,
                    Index dim = kModelDim, const std::string& prefix = "genomics") {
        if (subseq_lens.empty()) throw DimensionError("genomics encoder: no sub-sequences");
        for (std::size_t i = 0; i < subseq_lens.size(); ++i) {
            const std::string p = prefix + ".snn" + std::to_string(i);
            layer1_.emplace_back(store, p + ".fc1", static_cast<Index>(subseq_lens[i]), dim, rng);
            layer2_.emplace_back(store, p + ".fc2", dim, dim, rng);
        }
        aggregate_ = Linear(store, prefix + ".fc_agg", dim * static_cast<Index>(subseq_lens.size()), dim, rng);
    }

    std::size_t num_subsequences() const { return layer1_.size(); }

    Tensor operator()(const std::vector<std::vector<double>>& subseqs) const {
        if (subseqs.size() != layer1_.size()) {
            throw DimensionError("genomics encoder: expected " + std::to_string(layer1_.size()) +
                                 " sub-sequences, got " + std::to_string(subseqs.size()));
        }
        std::vector<Tensor> parts;
        parts.reserve(subseqs.size());
        for (std::size_t i = 0; i < subseqs.size(); ++i) {
            if (static_cast<Index>(subseqs[i].size()) != layer1_[i].in_features()) {
                throw DimensionError("genomics encoder: sub-sequence " + std::to_string(i) + " has length " +
                                     std::to_string(subseqs[i].size()) + ", expected " +
                                     std::to_string(layer1_[i].in_features()));
            }
            const Tensor x = Tensor::row(subseqs[i]);
            parts.push_back(selu(layer2_[i](selu(layer1_[i](x)))));
        }
        return aggregate_(concat_cols(parts));
    }

    const std::vector<Linear>& first_layers() const { return layer1_; }
    const std::vector<Linear>& second_layers() const { return layer2_; }
    const Linear& aggregator() const { return aggregate_; }

   private:
    std::vector<Linear> layer1_;
    std::vector<Linear> layer2_;
    Linear aggregate_;
};

}  // namespace ccl
