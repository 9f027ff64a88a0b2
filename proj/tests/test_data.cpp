#include "doctest.h"

#include "fedmix/data.hpp"
#include "fedmix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

using namespace fedmix::data;

namespace {

double l2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double label_entropy(const ShardDataset& sh) {
    std::map<int, std::size_t> counts;
    for (int y : sh.y) counts[y] += 1;
    double h = 0.0;
    for (const auto& [y, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(sh.y.size());
        h -= p * std::log(p);
    }
    return h;
}

// sorted multiset view for exact-partition checks
std::vector<std::pair<std::vector<double>, int>> flatten(const std::vector<ShardDataset>& shards) {
    std::vector<std::pair<std::vector<double>, int>> out;
    for (const auto& sh : shards) {
        for (std::size_t i = 0; i < sh.x.size(); ++i) out.push_back({sh.x[i], sh.y[i]});
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

TEST_CASE("make_blobs balances classes and is reproducible") {
    const Dataset ds = make_blobs(3, 4, 100, 0.5, 7);
    REQUIRE(ds.x.size() == 100);
    std::map<int, std::size_t> counts;
    for (int y : ds.y) counts[y] += 1;
    CHECK(counts.size() == 3);
    std::size_t lo = 100, hi = 0;
    for (const auto& [y, c] : counts) {
        lo = std::min(lo, c);
        hi = std::max(hi, c);
    }
    CHECK(hi - lo <= 1);

    const Dataset ds2 = make_blobs(3, 4, 100, 0.5, 7);
    CHECK(ds.x == ds2.x);
    CHECK(ds.y == ds2.y);
    const Dataset ds3 = make_blobs(3, 4, 100, 0.5, 8);
    CHECK(ds.x != ds3.x);

    CHECK_THROWS_AS((void)make_blobs(3, 1, 100, 0.5, 7), fedmix::ConfigError);
    CHECK_THROWS_AS((void)make_blobs(10, 4, 5, 0.5, 7), fedmix::ConfigError);
}

TEST_CASE("make_blobs at tiny spread is separated by class means") {
    const Dataset ds = make_blobs(4, 6, 200, 1e-6, 11);
    std::vector<std::vector<double>> means(4, std::vector<double>(6, 0.0));
    std::vector<std::size_t> counts(4, 0);
    for (std::size_t i = 0; i < ds.x.size(); ++i) {
        for (std::size_t j = 0; j < 6; ++j) means[ds.y[i]][j] += ds.x[i][j];
        counts[ds.y[i]] += 1;
    }
    for (std::size_t c = 0; c < 4; ++c) {
        for (double& v : means[c]) v /= static_cast<double>(counts[c]);
    }
    for (std::size_t i = 0; i < ds.x.size(); ++i) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < 4; ++c) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 6; ++j) {
                const double diff = ds.x[i][j] - means[c][j];
                dist += diff * diff;
            }
            if (dist < best_d) {
                best_d = dist;
                best = c;
            }
        }
        CHECK(static_cast<int>(best) == ds.y[i]);
    }
}

TEST_CASE("dirichlet partition is exact and size-balanced") {
    const Dataset ds = make_blobs(5, 3, 103, 0.8, 13);
    const auto shards = dirichlet_label_partition(ds, 4, 0.5, 13);
    REQUIRE(shards.size() == 4);

    std::size_t total = 0;
    for (const auto& sh : shards) {
        total += sh.x.size();
        CHECK((sh.x.size() == 25 || sh.x.size() == 26));
    }
    CHECK(total == 103);
    CHECK(flatten(shards) == flatten({[&] {
              ShardDataset all;
              all.x = ds.x;
              all.y = ds.y;
              return all;
          }()}));

    const auto single = dirichlet_label_partition(ds, 1, 0.5, 13);
    REQUIRE(single.size() == 1);
    CHECK(single[0].x.size() == ds.x.size());
}

TEST_CASE("dirichlet alpha controls label skew") {
    const Dataset ds = make_blobs(5, 3, 400, 0.8, 17);
    double h_low = 0.0, h_high = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        for (const auto& sh : dirichlet_label_partition(ds, 8, 0.1, seed)) {
            h_low += label_entropy(sh);
        }
        for (const auto& sh : dirichlet_label_partition(ds, 8, 100.0, seed)) {
            h_high += label_entropy(sh);
        }
    }
    CHECK(h_low < h_high);
}

TEST_CASE("transform bank is orthogonal with the identity at index 0") {
    const TransformBank bank = make_transform_bank(5, 19);
    REQUIRE(bank.mats.size() == 8);
    const std::vector<double> x = {1.0, -2.0, 0.5, 3.0, -0.25};
    CHECK(apply_transform(bank, 0, x) == x);
    for (int r = 1; r < 8; ++r) {
        const auto tx = apply_transform(bank, r, x);
        CHECK(std::fabs(l2(tx) - l2(x)) < 1e-9);
        CHECK(tx != x);
    }
    CHECK_THROWS_AS((void)apply_transform(bank, 8, x), fedmix::StructuralError);
}

TEST_CASE("transform partition stamps side indices and preserves norms") {
    const Dataset ds = make_blobs(3, 5, 120, 0.7, 23);
    const auto shards = transform_partition(ds, 6, 1.0, 23);
    REQUIRE(shards.size() == 6);

    const TransformBank bank = make_transform_bank(5, 23);
    std::set<int> seen;
    std::size_t total = 0;
    for (const auto& sh : shards) {
        total += sh.x.size();
        for (std::size_t i = 0; i < sh.x.size(); ++i) {
            CHECK(sh.side[i] >= 0);
            CHECK(sh.side[i] < 8);
            seen.insert(sh.side[i]);
        }
    }
    CHECK(total == 120);
    CHECK(seen.size() > 1);

    // same seed, same bytes
    const auto again = transform_partition(ds, 6, 1.0, 23);
    for (std::size_t s = 0; s < shards.size(); ++s) {
        CHECK(shards[s].x == again[s].x);
        CHECK(shards[s].side == again[s].side);
    }
}

TEST_CASE("combined transform partition also skews labels") {
    const Dataset ds = make_blobs(4, 5, 400, 0.7, 29);
    double h_plain = 0.0, h_combined = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (const auto& sh : transform_partition(ds, 8, 1.0, seed, false)) {
            h_plain += label_entropy(sh);
        }
        for (const auto& sh : transform_partition(ds, 8, 1.0, seed, true, 0.1)) {
            h_combined += label_entropy(sh);
        }
    }
    CHECK(h_combined < h_plain);
}

TEST_CASE("permutation partition relabels through balanced assignments") {
    const Dataset ds = make_blobs(4, 3, 200, 0.6, 31);

    const auto perms = make_permutations(4, 4, 31);
    REQUIRE(perms.size() == 4);
    for (std::size_t i = 0; i < perms.size(); ++i) {
        for (std::size_t j = i + 1; j < perms.size(); ++j) CHECK(perms[i] != perms[j]);
    }

    const PermutationPartition part = permutation_partition(ds, 20, perms, 31);
    REQUIRE(part.shards.size() == 20);
    std::map<int, int> held;
    for (int a : part.assignment) held[a] += 1;
    for (const auto& [pid, count] : held) CHECK(count == 5);

    // applying the inverse permutation recovers original labels
    auto flat = flatten(part.shards);
    std::vector<std::pair<std::vector<double>, int>> orig;
    for (std::size_t s = 0; s < part.shards.size(); ++s) {
        const auto& p = perms[part.assignment[s]];
        std::vector<int> inv(4);
        for (int c = 0; c < 4; ++c) inv[p[c]] = c;
        for (std::size_t i = 0; i < part.shards[s].x.size(); ++i) {
            orig.push_back({part.shards[s].x[i], inv[part.shards[s].y[i]]});
        }
    }
    std::sort(orig.begin(), orig.end());
    ShardDataset all;
    all.x = ds.x;
    all.y = ds.y;
    CHECK(orig == flatten({all}));

    // identity permutations leave labels alone
    const std::vector<std::vector<int>> id = {{0, 1, 2, 3}};
    const PermutationPartition plain = permutation_partition(ds, 5, id, 31);
    CHECK(flatten(plain.shards) == flatten({all}));
}

TEST_CASE("splits are 80/10/10 with a floor at ten examples") {
    const Dataset ds = make_blobs(2, 3, 200, 0.5, 37);
    const auto shards = dirichlet_label_partition(ds, 4, 1.0, 37);
    for (const auto& sh : shards) {
        const std::size_t n = sh.x.size();
        CHECK_FALSE(sh.all_train);
        CHECK(sh.splits.val.size() == n / 10);
        CHECK(sh.splits.test.size() == n / 10);
        CHECK(sh.splits.train.size() + sh.splits.val.size() + sh.splits.test.size() == n);

        std::set<std::size_t> seen;
        for (auto* sp : {&sh.splits.train, &sh.splits.val, &sh.splits.test}) {
            for (std::size_t i : *sp) CHECK(seen.insert(i).second);
        }
        CHECK(seen.size() == n);
    }

    const Dataset tiny = make_blobs(2, 3, 9, 0.5, 37);
    const auto tiny_shards = dirichlet_label_partition(tiny, 1, 1.0, 37);
    CHECK(tiny_shards[0].all_train);
    CHECK(tiny_shards[0].splits.train.size() == 9);
    CHECK(tiny_shards[0].splits.val.empty());
    CHECK(tiny_shards[0].splits.test.empty());
}

TEST_CASE("shard csv round-trips") {
    const Dataset ds = make_blobs(3, 4, 60, 0.5, 41);
    const auto shards = transform_partition(ds, 3, 1.0, 41);
    const std::string csv = shards_to_csv(shards);
    CHECK(csv.rfind("shard,split,side,y,x0,x1,x2,x3\n", 0) == 0);

    const auto back = shards_from_csv(csv);
    REQUIRE(back.size() == shards.size());
    const std::string csv2 = shards_to_csv(back);
    CHECK(csv == csv2);
    for (std::size_t s = 0; s < shards.size(); ++s) {
        CHECK(flatten({back[s]}) == flatten({shards[s]}));
        CHECK(back[s].splits.train.size() == shards[s].splits.train.size());
        CHECK(back[s].splits.test.size() == shards[s].splits.test.size());
    }
}
