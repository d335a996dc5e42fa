#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cmr/errors.hpp"
#include "cmr/metrics.hpp"

using namespace cmr;

namespace {

std::vector<std::string> toks(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

}  // namespace

TEST_CASE("token F1 fixtures") {
    struct Row {
        const char* hyp;
        const char* ref;
        double expect;
    };
    // expectations computed by hand from multiset precision/recall
    const Row rows[] = {
        {"a b c", "a b c", 1.0},
        {"a b", "c d", 0.0},
        {"the cat sat", "the cat ran", 2.0 / 3.0},
        {"a a b", "a b b", 2.0 / 3.0},
        {"a", "a b", 2.0 / 3.0},
        {"x y", "y z", 0.5},
        {"a a a", "a", 0.5},
        {"w x y z", "x z", 2.0 / 3.0},
        {"p q r s", "p q r s t u", 0.8},
        {"m", "m", 1.0},
    };
    for (const auto& r : rows) {
        CAPTURE(r.hyp);
        CAPTURE(r.ref);
        CHECK(std::abs(token_f1(toks(r.hyp), toks(r.ref)) - r.expect) < 1e-9);
    }
    CHECK(token_f1({}, toks("a")) == 0.0);
    CHECK(token_f1(toks("a"), {}) == 0.0);
}

TEST_CASE("token F1 equals ROUGE-L on single-token sequences") {
    for (auto [h, r] : std::vector<std::pair<const char*, const char*>>{{"a", "a"}, {"a", "b"}}) {
        CHECK(token_f1(toks(h), toks(r)) == doctest::Approx(rouge_l(toks(h), toks(r))).epsilon(1e-12));
    }
}

TEST_CASE("ROUGE-L fixtures") {
    struct Row {
        const char* hyp;
        const char* ref;
        double expect;
    };
    // LCS lengths worked out by hand; F = 2pr/(p+r), beta = 1
    const Row rows[] = {
        {"a b c", "a b c", 1.0},
        {"the cat sat", "the cat ran", 2.0 / 3.0},
        {"a b", "c d", 0.0},
        {"a b c d", "b d", 2.0 / 3.0},
        {"a c b", "a b c", 2.0 / 3.0},
        {"a b", "b a", 0.5},
        {"x", "y x", 2.0 / 3.0},
        {"q w e r t", "w r", 4.0 / 7.0},
    };
    for (const auto& r : rows) {
        CAPTURE(r.hyp);
        CAPTURE(r.ref);
        CHECK(std::abs(rouge_l(toks(r.hyp), toks(r.ref)) - r.expect) < 1e-9);
    }
    CHECK(rouge_l({}, toks("a")) == 0.0);
}

TEST_CASE("BLEU fixtures") {
    auto corpus = [](std::vector<const char*> hs, std::vector<const char*> rs) {
        std::vector<std::vector<std::string>> H, R;
        for (auto h : hs) H.push_back(toks(h));
        for (auto r : rs) R.push_back(toks(r));
        return std::make_pair(H, R);
    };

    SUBCASE("identical corpora score 1 at every order") {
        auto [H, R] = corpus({"the cat sat", "on a mat"}, {"the cat sat", "on a mat"});
        for (int n : {1, 2, 3}) CHECK(std::abs(bleu_n(H, R, n) - 1.0) < 1e-9);
    }
    SUBCASE("empty hypothesis scores 0") {
        auto [H, R] = corpus({""}, {"a b"});
        for (int n : {1, 2, 3}) CHECK(bleu_n(H, R, n) == 0.0);
    }
    SUBCASE("single pair, equal lengths") {
        auto [H, R] = corpus({"the cat sat"}, {"the cat ran"});
        // p1 = 2/3; bigrams 1 of 2 matched, add-one -> 2/3; trigram add-one -> 1/2
        CHECK(std::abs(bleu_n(H, R, 1) - 2.0 / 3.0) < 1e-9);
        CHECK(std::abs(bleu_n(H, R, 2) - 2.0 / 3.0) < 1e-9);
        CHECK(std::abs(bleu_n(H, R, 3) - std::cbrt(2.0 / 9.0)) < 1e-9);
    }
    SUBCASE("brevity penalty applies to short hypotheses") {
        auto [H, R] = corpus({"the cat"}, {"the cat sat"});
        CHECK(std::abs(bleu_n(H, R, 1) - std::exp(-0.5)) < 1e-9);
        // any deletion strictly lowers BLEU-1 from the identical-corpus 1.0
        CHECK(bleu_n(H, R, 1) < 1.0);
    }
    SUBCASE("two-sentence corpus aggregates counts before the geometric mean") {
        auto [H, R] = corpus({"a b", "c"}, {"a b", "c d"});
        // p1 = 3/3, bp = exp(1 - 4/3); bigrams 1/1 matched -> add-one (1+1)/(1+1)
        CHECK(std::abs(bleu_n(H, R, 1) - std::exp(-1.0 / 3.0)) < 1e-9);
        CHECK(std::abs(bleu_n(H, R, 2) - std::exp(-1.0 / 3.0)) < 1e-9);
    }
    SUBCASE("clipped counts: repeated hypothesis tokens only match as often as the reference") {
        auto [H, R] = corpus({"a a a a"}, {"a b c d"});
        // matched = 1 of 4, lengths equal so bp = 1
        CHECK(std::abs(bleu_n(H, R, 1) - 0.25) < 1e-9);
    }
    SUBCASE("corpus reordering leaves scores unchanged") {
        auto [H, R] = corpus({"a b c", "d e"}, {"a b x", "d y"});
        auto [H2, R2] = corpus({"d e", "a b c"}, {"d y", "a b x"});
        for (int n : {1, 2, 3}) CHECK(std::abs(bleu_n(H, R, n) - bleu_n(H2, R2, n)) < 1e-12);
    }
    SUBCASE("input validation") {
        auto [H, R] = corpus({"a"}, {"a", "b"});
        CHECK_THROWS_AS(bleu_n(H, R, 1), UsageError);
        auto [H2, R2] = corpus({"a"}, {"a"});
        CHECK_THROWS_AS(bleu_n(H2, R2, 0), UsageError);
    }
}

TEST_CASE("speaker separation on degenerate identical embeddings") {
    std::vector<std::vector<double>> g1 = {{1, 0}, {1, 0}};
    std::vector<std::vector<double>> g2 = {{1, 0}, {1, 0}};
    auto d = speaker_separation({g1, g2});
    CHECK(d.intra_speaker_cosine == doctest::Approx(1.0));
    CHECK(d.inter_speaker_cosine == doctest::Approx(1.0));
    CHECK(d.silhouette == doctest::Approx(0.0));
}

TEST_CASE("speaker separation on orthogonal tight clusters") {
    std::vector<std::vector<double>> g1 = {{1, 0}, {1, 0}, {1, 0}};
    std::vector<std::vector<double>> g2 = {{0, 1}, {0, 1}};
    auto d = speaker_separation({g1, g2});
    CHECK(d.intra_speaker_cosine == doctest::Approx(1.0));
    CHECK(d.inter_speaker_cosine == doctest::Approx(0.0));
    CHECK(d.silhouette == doctest::Approx(1.0));
}

TEST_CASE("speaker separation on random unit vectors shows no structure") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd(0.0, 1.0);
    double diff_sum = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto unit = [&] {
            std::vector<double> v(64);
            double n = 0;
            for (auto& x : v) {
                x = nd(rng);
                n += x * x;
            }
            n = std::sqrt(n);
            for (auto& x : v) x /= n;
            return v;
        };
        std::vector<std::vector<double>> g1 = {unit(), unit(), unit()};
        std::vector<std::vector<double>> g2 = {unit(), unit(), unit()};
        auto d = speaker_separation({g1, g2});
        diff_sum += d.intra_speaker_cosine - d.inter_speaker_cosine;
    }
    CHECK(std::abs(diff_sum / 1000.0) < 0.1);
}

TEST_CASE("speaker separation input validation") {
    std::vector<std::vector<double>> g1 = {{1, 0}, {0, 1}};
    CHECK_THROWS_AS(speaker_separation({g1}), UsageError);
    CHECK_THROWS_AS(speaker_separation({g1, {{1, 0}}}), UsageError);
}

TEST_CASE("PCA projection recovers a dominant axis") {
    // points on the x-axis with a touch of y noise: pc1 must align with x
    std::vector<std::vector<double>> emb = {
        {-4.0, 0.01, 0}, {-2.0, -0.02, 0}, {0.0, 0.015, 0}, {2.0, -0.01, 0}, {4.0, 0.005, 0}};
    auto proj = pca_project_2d(emb);
    REQUIRE(proj.size() == 5);
    // first components are the centered x values up to a global sign
    double sign = proj[4].first > 0 ? 1.0 : -1.0;
    for (size_t i = 0; i < emb.size(); ++i) {
        CHECK(sign * proj[i].first == doctest::Approx(emb[i][0]).epsilon(0.01));
        CHECK(std::abs(proj[i].second) < 0.05);
    }
    CHECK(pca_project_2d({}).empty());
}

TEST_CASE("metrics report serializes to json") {
    MetricsReport r;
    r.f1 = 12.5;
    r.sample_count = 3;
    r.embedding = EmbeddingDiagnostics{0.8, 0.1, 0.6};
    auto j = r.to_json();
    CHECK(j.find("\"f1\":12.5") != std::string::npos);
    CHECK(j.find("intra_speaker_cosine") != std::string::npos);
}
