#include "netstrat/fit.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "netstrat/error.hpp"
#include "netstrat/study_data.hpp"

namespace netstrat {

FitResult fit_model(const StudyData& data, const PriorConfig& prior, const ModelOptions& options,
                    const SamplerConfig& sampler) {
  prior.validate();
  const Posterior posterior(data, prior, options);
  const GradientFn f = [&posterior](std::span<const double> theta, std::span<double> grad) {
    return posterior.log_density_gradient(theta, grad);
  };
  const SampleResult raw = sample(f, posterior.dim(), sampler);

  FitResult fit;
  fit.layout = posterior.layout();
  fit.draws = to_draws(raw, fit.layout.names(data));
  for (std::size_t r = 0; r < fit.draws.size(); ++r) {
    const Parameters p = constrain(fit.layout, fit.draws.row(r));
    std::copy(p.values.begin(), p.values.end(),
              fit.draws.values.begin() + static_cast<std::ptrdiff_t>(r * fit.draws.dim()));
  }
  for (const auto& c : raw.chains) {
    fit.step_sizes.push_back(c.step_size);
    fit.warmup_divergences += c.warmup_divergences;
  }
  const auto divergent = std::count(fit.draws.divergent.begin(), fit.draws.divergent.end(), 1);
  if (divergent > 0) spdlog::warn("{} divergent transitions after warmup", divergent);
  return fit;
}

Parameters draw_parameters(const Draws& draws, const ParameterLayout& layout, std::size_t draw) {
  if (draws.dim() != layout.size()) throw ValidationError("draws do not match parameter layout");
  if (draw >= draws.size()) throw ValidationError("draw index out of range");
  Parameters p(layout);
  const auto row = draws.row(draw);
  std::copy(row.begin(), row.end(), p.values.begin());
  return p;
}

ParameterLayout layout_for_draws(const Draws& draws, const StudyData& data,
                                 const ModelOptions& options) {
  const auto layout = ParameterLayout::for_study(data, options);
  if (draws.names != layout.names(data))
    throw ValidationError("draw columns do not match the parameters of this study");
  return layout;
}

}  // namespace netstrat
