#include "cmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <json.hpp>

#include "cmr/errors.hpp"

namespace cmr {

std::string MetricsReport::to_json() const {
    nlohmann::json j = {{"f1", f1},       {"bleu1", bleu1},   {"bleu2", bleu2},
                        {"bleu3", bleu3}, {"rouge_l", rouge_l}, {"sample_count", sample_count}};
    if (embedding) {
        j["embedding"] = {{"intra_speaker_cosine", embedding->intra_speaker_cosine},
                          {"inter_speaker_cosine", embedding->inter_speaker_cosine},
                          {"silhouette", embedding->silhouette}};
    }
    return j.dump();
}

double token_f1(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    std::map<std::string, int> hcount, rcount;
    for (const auto& t : hyp) hcount[t]++;
    for (const auto& t : ref) rcount[t]++;
    int overlap = 0;
    for (const auto& [t, c] : hcount) {
        auto it = rcount.find(t);
        if (it != rcount.end()) overlap += std::min(c, it->second);
    }
    if (overlap == 0) return 0.0;
    double p = static_cast<double>(overlap) / hyp.size();
    double r = static_cast<double>(overlap) / ref.size();
    return 2.0 * p * r / (p + r);
}

namespace {

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks, int n) {
    std::map<std::vector<std::string>, int> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (size_t i = 0; i + n <= toks.size(); ++i)
        counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)]++;
    return counts;
}

}  // namespace

double bleu_n(const std::vector<std::vector<std::string>>& hyps, const std::vector<std::vector<std::string>>& refs,
              int n) {
    if (n < 1) throw UsageError("bleu order must be >= 1");
    if (hyps.size() != refs.size()) throw UsageError("bleu: hypothesis/reference count mismatch");
    if (hyps.empty()) return 0.0;

    std::vector<int64_t> matched(n, 0), total(n, 0);
    int64_t hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        hyp_len += static_cast<int64_t>(hyps[i].size());
        ref_len += static_cast<int64_t>(refs[i].size());
        for (int k = 1; k <= n; ++k) {
            auto hc = ngram_counts(hyps[i], k);
            auto rc = ngram_counts(refs[i], k);
            for (const auto& [gram, c] : hc) {
                total[k - 1] += c;
                auto it = rc.find(gram);
                if (it != rc.end()) matched[k - 1] += std::min(c, it->second);
            }
        }
    }
    if (hyp_len == 0) return 0.0;

    double log_prec = 0;
    for (int k = 1; k <= n; ++k) {
        double num = static_cast<double>(matched[k - 1]) + (k >= 2 ? 1.0 : 0.0);
        double den = static_cast<double>(total[k - 1]) + (k >= 2 ? 1.0 : 0.0);
        if (num == 0.0 || den == 0.0) return 0.0;
        log_prec += std::log(num / den);
    }
    log_prec /= n;
    double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / hyp_len);
    return bp * std::exp(log_prec);
}

double rouge_l(const std::vector<std::string>& hyp, const std::vector<std::string>& ref) {
    if (hyp.empty() || ref.empty()) return 0.0;
    size_t m = hyp.size(), r = ref.size();
    std::vector<std::vector<int>> lcs(m + 1, std::vector<int>(r + 1, 0));
    for (size_t i = 1; i <= m; ++i)
        for (size_t j = 1; j <= r; ++j)
            lcs[i][j] = hyp[i - 1] == ref[j - 1] ? lcs[i - 1][j - 1] + 1 : std::max(lcs[i - 1][j], lcs[i][j - 1]);
    int l = lcs[m][r];
    if (l == 0) return 0.0;
    double p = static_cast<double>(l) / m;
    double rec = static_cast<double>(l) / r;
    return 2.0 * p * rec / (p + rec);
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    double d = std::sqrt(na) * std::sqrt(nb);
    return d > 0 ? dot / d : 0.0;
}

}  // namespace

EmbeddingDiagnostics speaker_separation(const std::vector<std::vector<std::vector<double>>>& groups) {
    if (groups.size() < 2) throw UsageError("speaker_separation requires >= 2 speakers");
    for (const auto& g : groups)
        if (g.size() < 2) throw UsageError("speaker_separation requires >= 2 embeddings per speaker");

    EmbeddingDiagnostics d;
    double intra_sum = 0, inter_sum = 0;
    int64_t intra_n = 0, inter_n = 0;
    for (size_t g = 0; g < groups.size(); ++g) {
        for (size_t i = 0; i < groups[g].size(); ++i) {
            for (size_t j = i + 1; j < groups[g].size(); ++j) {
                intra_sum += cosine(groups[g][i], groups[g][j]);
                ++intra_n;
            }
            for (size_t h = g + 1; h < groups.size(); ++h)
                for (const auto& e : groups[h]) {
                    inter_sum += cosine(groups[g][i], e);
                    ++inter_n;
                }
        }
    }
    d.intra_speaker_cosine = intra_sum / intra_n;
    d.inter_speaker_cosine = inter_sum / inter_n;

    // silhouette with cosine distance 1 - cos
    double sil_sum = 0;
    int64_t sil_n = 0;
    for (size_t g = 0; g < groups.size(); ++g) {
        for (size_t i = 0; i < groups[g].size(); ++i) {
            double a = 0;
            for (size_t j = 0; j < groups[g].size(); ++j)
                if (j != i) a += 1.0 - cosine(groups[g][i], groups[g][j]);
            a /= static_cast<double>(groups[g].size() - 1);
            double b = std::numeric_limits<double>::infinity();
            for (size_t h = 0; h < groups.size(); ++h) {
                if (h == g) continue;
                double m = 0;
                for (const auto& e : groups[h]) m += 1.0 - cosine(groups[g][i], e);
                b = std::min(b, m / static_cast<double>(groups[h].size()));
            }
            double mx = std::max(a, b);
            sil_sum += mx > 0 ? (b - a) / mx : 0.0;
            ++sil_n;
        }
    }
    d.silhouette = sil_sum / sil_n;
    return d;
}

std::vector<std::pair<double, double>> pca_project_2d(const std::vector<std::vector<double>>& embeddings) {
    if (embeddings.empty()) return {};
    size_t n = embeddings.size(), dim = embeddings[0].size();
    std::vector<double> mean(dim, 0);
    for (const auto& e : embeddings)
        for (size_t j = 0; j < dim; ++j) mean[j] += e[j];
    for (auto& m : mean) m /= static_cast<double>(n);

    std::vector<std::vector<double>> centered(n, std::vector<double>(dim));
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < dim; ++j) centered[i][j] = embeddings[i][j] - mean[j];

    auto mat_vec = [&](const std::vector<double>& v, const std::vector<double>* deflate) {
        // (X^T X) v, optionally deflated by the first component
        std::vector<double> xv(n, 0);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < dim; ++j) xv[i] += centered[i][j] * v[j];
        std::vector<double> out(dim, 0);
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < dim; ++j) out[j] += centered[i][j] * xv[i];
        if (deflate) {
            double proj = 0;
            for (size_t j = 0; j < dim; ++j) proj += out[j] * (*deflate)[j];
            for (size_t j = 0; j < dim; ++j) out[j] -= proj * (*deflate)[j];
        }
        return out;
    };
    auto power_iter = [&](const std::vector<double>* deflate) {
        std::vector<double> v(dim);
        for (size_t j = 0; j < dim; ++j) v[j] = std::cos(static_cast<double>(j) + 1.0);
        for (int it = 0; it < 200; ++it) {
            if (deflate) {
                double proj = 0;
                for (size_t j = 0; j < dim; ++j) proj += v[j] * (*deflate)[j];
                for (size_t j = 0; j < dim; ++j) v[j] -= proj * (*deflate)[j];
            }
            auto nv = mat_vec(v, deflate);
            double nrm = std::sqrt(std::inner_product(nv.begin(), nv.end(), nv.begin(), 0.0));
            if (nrm < 1e-14) break;
            for (size_t j = 0; j < dim; ++j) v[j] = nv[j] / nrm;
        }
        return v;
    };
    auto pc1 = power_iter(nullptr);
    auto pc2 = power_iter(&pc1);

    std::vector<std::pair<double, double>> out(n);
    for (size_t i = 0; i < n; ++i) {
        double x = 0, y = 0;
        for (size_t j = 0; j < dim; ++j) {
            x += centered[i][j] * pc1[j];
            y += centered[i][j] * pc2[j];
        }
        out[i] = {x, y};
    }
    return out;
}

}  // namespace cmr
