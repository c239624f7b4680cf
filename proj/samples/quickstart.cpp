// Synthesize three drifting clusters and print how far points move between
// consecutive epochs with and without alignment.

#include <iostream>

#include "alignmap/alignmap.hpp"

int main() {
    alignmap::SynthParams params;
    params.n_clusters = 3;
    params.points_per_cluster = 100;
    params.n_epochs = 4;
    auto series = alignmap::synth_series(params);

    std::vector<alignmap::FuzzyGraph> graphs;
    std::vector<alignmap::SliceInfo> info;
    for (const auto& slice : series.slices) {
        auto knn = alignmap::exact_knn(slice.matrix, 15, alignmap::Metric::euclidean);
        graphs.push_back(alignmap::fuzzy_graph(knn));
        info.push_back({ slice.layer_id, slice.epoch, slice.sample_ids, slice.labels });
    }

    for (double weight : { 0.0, 0.01 }) {
        alignmap::Hyperparameters hp;
        hp.alignment_weight = weight;
        auto layout = alignmap::optimize_aligned(graphs, info, hp);
        std::cout << "alignment_weight=" << weight << " displacement:";
        for (auto d : alignmap::mean_displacement(layout.slices)) {
            std::cout << " " << d;
        }
        std::cout << "\n";
    }
    return 0;
}
