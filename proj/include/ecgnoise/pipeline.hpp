#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ecgnoise/cae.hpp"
#include "ecgnoise/detect.hpp"
#include "ecgnoise/eval.hpp"
#include "ecgnoise/signal_io.hpp"

namespace ecgnoise {

/// Encodes every window of the dataset into an n x latent_dim matrix.
FeatureMatrix encode_dataset(const CaeModel& model, const Dataset& dataset);

std::vector<double> recon_scores(const CaeModel& model, const Dataset& dataset);
std::vector<double> ensemble_scores(const EnsembleDetector& ensemble,
                                    const FeatureMatrix& features);
std::vector<double> member_scores(const ClusterDetector& member, const FeatureMatrix& features);

/// Full report over {recon, mahalanobis per member, ensemble} x {Level 2,
/// Level 3}: clean_test provides the negatives for both levels.
EvalReport evaluate_pipeline(const CaeModel& model, const EnsembleDetector& ensemble,
                             const Dataset& clean_test, const Dataset& level2,
                             const Dataset& level3, std::span<const std::uint64_t> seeds);

}  // namespace ecgnoise
