#include "fedmix/metrics.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace fedmix;

namespace {

ParamVector one_block(std::vector<double> v) {
    Block b;
    b.name = "w";
    b.dims = {v.size()};
    b.values = std::move(v);
    ParamVector p;
    p.blocks.push_back(std::move(b));
    return p;
}

ParamVector two_blocks(std::vector<double> a, std::vector<double> b) {
    ParamVector p = one_block(std::move(a));
    Block blk;
    blk.name = "v";
    blk.dims = {b.size()};
    blk.values = std::move(b);
    p.blocks.push_back(std::move(blk));
    return p;
}

} // namespace

TEST_CASE("gradient divergence of identical deltas is zero") {
    const ParamVector d1 = one_block({1.0, 2.0, -0.5});
    const ParamVector d2 = one_block({1.0, 2.0, -0.5});
    const double gd = metrics::gradient_divergence({&d1, &d2}, {0.5, 0.5});
    CHECK(gd == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("gradient divergence of opposite equal-weight deltas is 0.5") {
    // cross pairs each contribute 0.25 * 0.5 * (1 - (-1)) = 0.25
    const ParamVector d1 = one_block({1.0, 2.0});
    const ParamVector d2 = one_block({-1.0, -2.0});
    const double gd = metrics::gradient_divergence({&d1, &d2}, {0.5, 0.5});
    CHECK(gd == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gradient divergence of orthogonal equal-weight deltas is 0.25") {
    const ParamVector d1 = one_block({1.0, 0.0});
    const ParamVector d2 = one_block({0.0, 1.0});
    const double gd = metrics::gradient_divergence({&d1, &d2}, {0.5, 0.5});
    CHECK(gd == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gradient divergence sums over parameter blocks") {
    // block w contributes 0.5 (opposite), block v contributes 0 (identical)
    const ParamVector d1 = two_blocks({1.0, 0.0}, {3.0});
    const ParamVector d2 = two_blocks({-1.0, 0.0}, {3.0});
    const double gd = metrics::gradient_divergence({&d1, &d2}, {0.5, 0.5});
    CHECK(gd == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zero-norm delta contributes cosine 0 and raises the flag") {
    const ParamVector d1 = one_block({1.0, 0.0});
    const ParamVector d2 = one_block({0.0, 0.0});
    bool flag = false;
    const double gd = metrics::gradient_divergence({&d1, &d2}, {0.5, 0.5}, &flag);
    // self pair of the zero delta: 0.125; two cross pairs: 0.25
    CHECK(gd == doctest::Approx(0.375).epsilon(1e-12));
    CHECK(flag);

    flag = true;
    metrics::gradient_divergence({&d1, &d1}, {0.5, 0.5}, &flag);
    CHECK_FALSE(flag);
}

TEST_CASE("gradient divergence ignores shard order and delta scale") {
    const ParamVector d1 = one_block({1.0, 2.0, 3.0});
    const ParamVector d2 = one_block({-2.0, 0.5, 1.0});
    const ParamVector d2s = one_block({-2.0 * 3.75, 0.5 * 3.75, 1.0 * 3.75});

    const double a = metrics::gradient_divergence({&d1, &d2}, {0.3, 0.7});
    const double b = metrics::gradient_divergence({&d2, &d1}, {0.7, 0.3});
    const double c = metrics::gradient_divergence({&d1, &d2s}, {0.3, 0.7});
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a == doctest::Approx(c).epsilon(1e-12));
}

TEST_CASE("gradient divergence input checks") {
    const ParamVector d1 = one_block({1.0});
    CHECK_THROWS_AS(metrics::gradient_divergence({}, {}), ContractViolation);
    CHECK_THROWS_AS(metrics::gradient_divergence({&d1}, {0.5, 0.5}),
                    ContractViolation);
}

TEST_CASE("sliding mean covers the trailing window") {
    const std::vector<double> v{1.0, 2.0, 3.0, 4.0, 5.0};
    CHECK(metrics::sliding_mean(v, 2) == doctest::Approx(4.5));
    CHECK(metrics::sliding_mean(v, 5) == doctest::Approx(3.0));
    CHECK(metrics::sliding_mean(v, 10) == doctest::Approx(3.0)); // all of them
    CHECK(metrics::sliding_mean(v, 1) == doctest::Approx(5.0));
    CHECK_THROWS_AS(metrics::sliding_mean({}, 3), ContractViolation);
}

TEST_CASE("single-step privacy reconstruction inverts the bias drift exactly") {
    // ascent on the log-likelihood from uniform predictions moves the bias
    // by lr * (p - 1/C); a shard holding only class 0 gives p = e_0
    const std::size_t C = 10;
    const double lr = 0.05;
    std::vector<double> before(C, 0.2);
    std::vector<double> after(before);
    for (std::size_t c = 0; c < C; ++c) {
        const double p = c == 0 ? 1.0 : 0.0;
        after[c] += lr * (p - 1.0 / static_cast<double>(C));
    }
    const auto rec = metrics::privacy_reconstruct(before, after, lr, C,
                                                  metrics::ReconMode::single_full_batch);
    double l1 = 0.0;
    for (std::size_t c = 0; c < C; ++c)
        l1 += std::abs(rec[c] - (c == 0 ? 1.0 : 0.0));
    CHECK(l1 < 1e-12);
}

TEST_CASE("single-step reconstruction is exact on random marginals") {
    RngStream rng = RngStream::named(17, "privacy-test");
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t C = 2 + rng.below(9);
        const std::vector<double> p = rng.dirichlet(1.0, C);
        const double lr = 0.001 + rng.uniform01();
        std::vector<double> before(C), after(C);
        for (std::size_t c = 0; c < C; ++c) {
            before[c] = rng.normal();
            after[c] = before[c] + lr * (p[c] - 1.0 / static_cast<double>(C));
        }
        const auto rec = metrics::privacy_reconstruct(
            before, after, lr, C, metrics::ReconMode::single_full_batch);
        double l1 = 0.0, sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            l1 += std::abs(rec[c] - p[c]);
            sum += rec[c];
        }
        CHECK(l1 < 1e-9);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("uniform shard reconstructs to uniform in both modes") {
    const std::vector<double> b(4, 1.5); // no drift
    const auto single = metrics::privacy_reconstruct(
        b, b, 0.1, 4, metrics::ReconMode::single_full_batch);
    const auto multi =
        metrics::privacy_reconstruct(b, b, 0.1, 4, metrics::ReconMode::multi_step);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(single[c] == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(multi[c] == doctest::Approx(0.25).epsilon(1e-12));
    }
}

TEST_CASE("multi-step reconstruction normalizes the positive drift") {
    const std::vector<double> before{0.0, 0.0, 0.0};
    const std::vector<double> after{0.3, -0.1, 0.1};
    const auto rec = metrics::privacy_reconstruct(before, after, 0.5, 3,
                                                  metrics::ReconMode::multi_step);
    CHECK(rec[0] == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(rec[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(rec[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("privacy reconstruction rejects bad inputs") {
    const std::vector<double> b(4, 0.0);
    CHECK_THROWS_AS(metrics::privacy_reconstruct(b, b, 0.0, 4,
                                                 metrics::ReconMode::single_full_batch),
                    ConfigError);
    CHECK_THROWS_AS(metrics::privacy_reconstruct(b, b, 0.1, 5,
                                                 metrics::ReconMode::single_full_batch),
                    ContractViolation);
}

TEST_CASE("clustering score is 1 for one-hot q matching truth up to relabeling") {
    // experts carry the clusters in scrambled order (2,3,0,1)
    const std::vector<int> truth{0, 0, 1, 1, 2, 2, 3, 3};
    std::vector<std::vector<double>> q;
    const std::size_t relabel[4] = {2, 3, 0, 1};
    for (int g : truth) {
        std::vector<double> row(4, 0.0);
        row[relabel[g]] = 1.0;
        q.push_back(row);
    }
    CHECK(metrics::clustering_score(q, truth, 4) == doctest::Approx(1.0));
}

TEST_CASE("uniform q scores the largest cluster fraction") {
    // every shard tie-breaks to expert 0; the best map sends one cluster there
    const std::vector<int> truth{0, 0, 0, 1, 1, 2};
    const std::vector<std::vector<double>> q(6, std::vector<double>(3, 1.0 / 3.0));
    CHECK(metrics::clustering_score(q, truth, 3) == doctest::Approx(0.5));
}

TEST_CASE("three experts over four true clusters cap at 0.75") {
    // 20 balanced shards; expert 2 absorbs clusters 2 and 3
    std::vector<int> truth;
    std::vector<std::vector<double>> q;
    for (int g = 0; g < 4; ++g) {
        for (int i = 0; i < 5; ++i) {
            truth.push_back(g);
            std::vector<double> row(3, 0.05);
            row[std::min(g, 2)] = 0.9;
            q.push_back(row);
        }
    }
    CHECK(metrics::clustering_score(q, truth, 3) == doctest::Approx(0.75));
}

TEST_CASE("clustering score is invariant to expert relabeling") {
    RngStream rng = RngStream::named(3, "cluster-test");
    const std::size_t K = 4, S = 12;
    std::vector<int> truth;
    std::vector<std::vector<double>> q, q_relabeled;
    const std::size_t perm[4] = {3, 1, 0, 2};
    for (std::size_t s = 0; s < S; ++s) {
        truth.push_back(static_cast<int>(rng.below(3)));
        const std::vector<double> row = rng.dirichlet(0.5, K);
        std::vector<double> prow(K);
        for (std::size_t k = 0; k < K; ++k) prow[perm[k]] = row[k];
        q.push_back(row);
        q_relabeled.push_back(prow);
    }
    CHECK(metrics::clustering_score(q, truth, K) ==
          doctest::Approx(metrics::clustering_score(q_relabeled, truth, K)));
}

TEST_CASE("split accuracy counts top-1 hits over the split") {
    data::ShardDataset shard;
    shard.C = 2;
    shard.d = 1;
    shard.x = {{0.0}, {1.0}, {2.0}, {3.0}};
    shard.y = {0, 1, 1, 0};
    shard.side = {0, 0, 0, 0};
    shard.splits.test = {0, 1, 2, 3};

    const auto perfect = [&](const std::vector<double>& x) {
        std::vector<double> p(2, 0.0);
        const std::size_t i = static_cast<std::size_t>(x[0]);
        p[static_cast<std::size_t>(shard.y[i])] = 1.0;
        return p;
    };
    CHECK(metrics::split_accuracy(shard, shard.splits.test, perfect) ==
          doctest::Approx(1.0));

    const auto constant = [](const std::vector<double>&) {
        return std::vector<double>{0.9, 0.1};
    };
    CHECK(metrics::split_accuracy(shard, shard.splits.test, constant) ==
          doctest::Approx(0.5));

    CHECK_THROWS_AS(metrics::split_accuracy(shard, {}, constant), ContractViolation);
}

TEST_CASE("metrics CSV header and row layout") {
    CHECK(metrics::metrics_csv_header() ==
          "round,algo,K,local_acc,global_acc,bytes_up,bytes_down,gd,gd_window,"
          "phi_entropy,active_experts_mean,clustering_score");

    metrics::RoundMetrics m;
    m.round = 7;
    m.algo = "fedmix";
    m.K = 4;
    m.local_acc = 0.5;
    m.global_acc = 0.25;
    m.bytes_up = 1024;
    m.bytes_down = 2048;
    m.gd = 0.125;
    m.gd_window = 0.0625;
    m.phi_entropy = 0.75;
    m.active_experts_mean = 4.0;
    m.clustering_score = -1.0;
    CHECK(metrics::metrics_csv_row(m) ==
          "7,fedmix,4,0.5,0.25,1024,2048,0.125,0.0625,0.75,4,-1");
}
