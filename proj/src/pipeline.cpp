#include "ecgnoise/pipeline.hpp"

#include <algorithm>
#include <string>

namespace ecgnoise {

FeatureMatrix encode_dataset(const CaeModel& model, const Dataset& dataset) {
    validate_dataset(dataset);
    FeatureMatrix features(dataset.windows.size(), model.latent_dim());
    for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
        const LatentFeature feature = encode_window(model, dataset.windows[i]);
        std::copy(feature.values.begin(), feature.values.end(), features.row(i).begin());
    }
    return features;
}

std::vector<double> recon_scores(const CaeModel& model, const Dataset& dataset) {
    validate_dataset(dataset);
    std::vector<double> scores(dataset.windows.size());
    for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
        scores[i] = recon_score(model, dataset.windows[i]);
    }
    return scores;
}

std::vector<double> ensemble_scores(const EnsembleDetector& ensemble,
                                    const FeatureMatrix& features) {
    std::vector<double> scores(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) {
        scores[i] = ensemble_score(ensemble, features.row(i));
    }
    return scores;
}

std::vector<double> member_scores(const ClusterDetector& member, const FeatureMatrix& features) {
    std::vector<double> scores(features.rows);
    for (std::size_t i = 0; i < features.rows; ++i) {
        scores[i] = noise_score(member, features.row(i));
    }
    return scores;
}

EvalReport evaluate_pipeline(const CaeModel& model, const EnsembleDetector& ensemble,
                             const Dataset& clean_test, const Dataset& level2,
                             const Dataset& level3, std::span<const std::uint64_t> seeds) {
    const FeatureMatrix clean_features = encode_dataset(model, clean_test);
    const std::vector<double> clean_recon = recon_scores(model, clean_test);

    EvalReport report;
    struct LevelData {
        int level;
        const Dataset* dataset;
    };
    for (const LevelData& entry : {LevelData{2, &level2}, LevelData{3, &level3}}) {
        const FeatureMatrix noisy_features = encode_dataset(model, *entry.dataset);

        EvalCell cell = evaluate_scores(clean_recon, recon_scores(model, *entry.dataset), seeds);
        cell.method = "recon";
        cell.level = entry.level;
        report.cells.push_back(std::move(cell));

        for (const auto& member : ensemble.members) {
            cell = evaluate_scores(member_scores(member, clean_features),
                                   member_scores(member, noisy_features), seeds);
            cell.method = "mahalanobis_m" + std::to_string(member.k);
            cell.level = entry.level;
            report.cells.push_back(std::move(cell));
        }

        cell = evaluate_scores(ensemble_scores(ensemble, clean_features),
                               ensemble_scores(ensemble, noisy_features), seeds);
        cell.method = "ensemble";
        cell.level = entry.level;
        report.cells.push_back(std::move(cell));
    }
    return report;
}

}  // namespace ecgnoise
