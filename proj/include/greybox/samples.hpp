#pragma once

// Posterior sample container shared by the samplers and the diagnostics:
// constrained-space draws laid out [chain][draw][coordinate] plus per-draw
// sampler diagnostics.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "greybox/density.hpp"
#include "greybox/errors.hpp"

namespace greybox {

struct DrawDiagnostics {
    int tree_depth = 0;
    bool divergent = false;
    double accept_stat = 0.0;
};

struct PosteriorSamples {
    ParamLayout layout;
    std::size_t chains = 0;
    std::size_t draws = 0;              // per chain, warmup excluded
    std::vector<double> values;         // chains * draws * dimension, constrained
    std::vector<DrawDiagnostics> info;  // chains * draws
    std::vector<std::string> warnings;

    std::size_t dimension() const { return layout.dimension(); }

    double value(std::size_t chain, std::size_t draw, std::size_t coord) const {
        return values[(chain * draws + draw) * dimension() + coord];
    }
    std::span<const double> draw(std::size_t chain, std::size_t d) const {
        return std::span<const double>(values).subspan((chain * draws + d) * dimension(),
                                                       dimension());
    }
    const DrawDiagnostics& diagnostics(std::size_t chain, std::size_t d) const {
        return info[chain * draws + d];
    }

    // All draws of one coordinate, chains concatenated in chain order.
    std::vector<double> flat(std::size_t coord) const {
        std::vector<double> out;
        out.reserve(chains * draws);
        for (std::size_t c = 0; c < chains; ++c)
            for (std::size_t d = 0; d < draws; ++d) out.push_back(value(c, d, coord));
        return out;
    }

    // One coordinate as per-chain series (the shape diagnostics want).
    std::vector<std::vector<double>> chains_for(std::size_t coord) const {
        std::vector<std::vector<double>> out(chains);
        for (std::size_t c = 0; c < chains; ++c) {
            out[c].reserve(draws);
            for (std::size_t d = 0; d < draws; ++d) out[c].push_back(value(c, d, coord));
        }
        return out;
    }

    std::size_t index_of(const std::string& name) const { return layout.index_of(name); }
};

} // namespace greybox
