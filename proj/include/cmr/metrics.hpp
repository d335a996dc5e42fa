#pragma once

#include <optional>
#include <string>
#include <vector>

namespace cmr {

struct EmbeddingDiagnostics {
    double intra_speaker_cosine = 0;
    double inter_speaker_cosine = 0;
    double silhouette = 0;
};

struct MetricsReport {
    double f1 = 0;       // all reported x100
    double bleu1 = 0;
    double bleu2 = 0;
    double bleu3 = 0;
    double rouge_l = 0;
    int sample_count = 0;
    std::optional<EmbeddingDiagnostics> embedding;

    std::string to_json() const;
};

// Unigram-overlap F1 (multiset intersection); 0 if either side is empty.
double token_f1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Corpus-level BLEU-n: geometric mean of modified precisions up to n with
// add-one smoothing on orders >= 2, times the brevity penalty.
double bleu_n(const std::vector<std::vector<std::string>>& hyps, const std::vector<std::vector<std::string>>& refs,
              int n);

// LCS-based F-measure with beta = 1.
double rouge_l(const std::vector<std::string>& hyp, const std::vector<std::string>& ref);

// Mean pairwise cosine within/across speakers plus a cosine-distance
// silhouette; needs >= 2 speakers with >= 2 embeddings each.
EmbeddingDiagnostics speaker_separation(const std::vector<std::vector<std::vector<double>>>& groups);

// Top-2 principal components per embedding, for external plotting.
std::vector<std::pair<double, double>> pca_project_2d(const std::vector<std::vector<double>>& embeddings);

}  // namespace cmr
