#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "madapt/tensor.hpp"

namespace madapt {

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::int64_t coordinates = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    std::string worst_parameter;
    double worst = 0.0;

    bool passed(double threshold = 1e-4) const { return worst < threshold; }
    std::string to_string() const;
};

// Verifies analytic gradients of the whole pipeline (encoder -> SA/SA/CA ->
// decoder -> loss network -> total loss) against central finite differences,
// on a model small enough to difference every parameter. The multi-adaptation
// module runs on 1 x 4 x 8 x 8 features.
GradCheckReport gradcheck_full_pipeline(std::uint64_t seed, double h = 1e-5);

}  // namespace madapt
