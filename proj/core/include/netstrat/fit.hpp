#pragma once

#include <cstddef>
#include <vector>

#include "netstrat/model.hpp"
#include "netstrat/sampler.hpp"

namespace netstrat {

class StudyData;

struct FitResult {
  ParameterLayout layout;
  Draws draws;  // natural scale, named by ParameterLayout::names
  std::vector<double> step_sizes;  // per chain
  std::size_t warmup_divergences = 0;
};

// Samples the posterior of the principal stratification model for `data`.
FitResult fit_model(const StudyData& data, const PriorConfig& prior, const ModelOptions& options,
                    const SamplerConfig& sampler);

// Parameters of retained draw `draw` (chain-major).
Parameters draw_parameters(const Draws& draws, const ParameterLayout& layout, std::size_t draw);

// Checks that the draws' columns match the layout of `data` under `options`
// and returns that layout; throws ValidationError otherwise.
ParameterLayout layout_for_draws(const Draws& draws, const StudyData& data,
                                 const ModelOptions& options);

}  // namespace netstrat
