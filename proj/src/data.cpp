#include "fedmix/data.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/kernels.hpp"
#include "fedmix/rng.hpp"
#include "fedmix/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fedmix::data {
namespace {

// 80/10/10 with at least one val/test example once the shard has 10 points;
// smaller shards go entirely to train.
void make_splits(ShardDataset& shard, std::uint64_t seed) {
    const std::size_t n = shard.x.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (n < 10) {
        shard.splits.train = idx;
        shard.all_train = true;
        return;
    }
    RngStream rng = RngStream::named(seed, "split", static_cast<std::uint64_t>(shard.shard_id));
    rng.shuffle(idx);
    const std::size_t n_val = n / 10;
    const std::size_t n_test = n / 10;
    const std::size_t n_train = n - n_val - n_test;
    shard.splits.train.assign(idx.begin(), idx.begin() + n_train);
    shard.splits.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    shard.splits.test.assign(idx.begin() + n_train + n_val, idx.end());
}

std::vector<ShardDataset> assemble_shards(const Dataset& ds,
                                          const std::vector<std::vector<std::size_t>>& members,
                                          std::uint64_t seed) {
    std::vector<ShardDataset> shards(members.size());
    for (std::size_t s = 0; s < members.size(); ++s) {
        ShardDataset& sh = shards[s];
        sh.shard_id = static_cast<int>(s);
        sh.C = ds.C;
        sh.d = ds.d;
        sh.x.reserve(members[s].size());
        for (std::size_t i : members[s]) {
            sh.x.push_back(ds.x[i]);
            sh.y.push_back(ds.y[i]);
            sh.side.push_back(0);
        }
        make_splits(sh, seed);
    }
    return shards;
}

std::size_t draw_categorical(RngStream& rng, const std::vector<double>& w) {
    double total = 0.0;
    for (double v : w) total += v;
    double u = rng.uniform01() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        u -= w[i];
        if (u < 0.0) return i;
    }
    for (std::size_t i = w.size(); i-- > 0;) {
        if (w[i] > 0.0) return i;
    }
    return 0;
}

// Equal-size quotas; the first n % S shards take one extra.
std::vector<std::size_t> shard_quotas(std::size_t n, std::size_t S) {
    std::vector<std::size_t> q(S, n / S);
    for (std::size_t s = 0; s < n % S; ++s) q[s] += 1;
    return q;
}

std::vector<std::vector<std::size_t>> dirichlet_members(const Dataset& ds, std::size_t S,
                                                        double alpha, std::uint64_t seed) {
    if (S == 0) throw ConfigError("shard count must be at least 1");
    if (alpha <= 0.0) throw ConfigError("dirichlet alpha must be positive");
    std::vector<std::vector<std::size_t>> pools(ds.C);
    for (std::size_t i = 0; i < ds.y.size(); ++i) {
        pools[static_cast<std::size_t>(ds.y[i])].push_back(i);
    }
    for (std::size_t c = 0; c < ds.C; ++c) {
        RngStream rng = RngStream::named(seed, "partition-pool", c);
        rng.shuffle(pools[c]);
    }

    const std::vector<std::size_t> quotas = shard_quotas(ds.x.size(), S);
    std::vector<std::vector<std::size_t>> members(S);
    for (std::size_t s = 0; s < S; ++s) {
        RngStream dir_rng = RngStream::named(seed, "partition-dir", s);
        const std::vector<double> props = dir_rng.dirichlet(alpha, ds.C);
        RngStream draw_rng = RngStream::named(seed, "partition-draw", s);
        for (std::size_t i = 0; i < quotas[s]; ++i) {
            // renormalize over classes that still have samples
            std::vector<double> w = props;
            for (std::size_t c = 0; c < ds.C; ++c) {
                if (pools[c].empty()) w[c] = 0.0;
            }
            const std::size_t c = draw_categorical(draw_rng, w);
            if (pools[c].empty()) throw StructuralError("class pools exhausted early");
            members[s].push_back(pools[c].back());
            pools[c].pop_back();
        }
    }
    return members;
}

std::vector<std::vector<std::size_t>> uniform_members(const Dataset& ds, std::size_t S,
                                                      std::uint64_t seed) {
    if (S == 0) throw ConfigError("shard count must be at least 1");
    std::vector<std::size_t> idx(ds.x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    RngStream rng = RngStream::named(seed, "partition-shuffle");
    rng.shuffle(idx);
    const std::vector<std::size_t> quotas = shard_quotas(idx.size(), S);
    std::vector<std::vector<std::size_t>> members(S);
    std::size_t at = 0;
    for (std::size_t s = 0; s < S; ++s) {
        members[s].assign(idx.begin() + at, idx.begin() + at + quotas[s]);
        at += quotas[s];
    }
    return members;
}

} // namespace

Dataset make_blobs(std::size_t C, std::size_t d, std::size_t n, double spread,
                   std::uint64_t seed) {
    if (d < 2) throw ConfigError("blob dimension must be at least 2");
    if (C == 0 || n < C) throw ConfigError("need at least one point per class");

    std::vector<std::vector<double>> centers(C, std::vector<double>(d, 0.0));
    for (std::size_t c = 0; c < C; ++c) {
        RngStream rng = RngStream::named(seed, "blob-centers", c);
        const std::size_t axis = c % d;
        centers[c][axis] = 2.0 * (1.0 + static_cast<double>(c / d));
        for (std::size_t j = 0; j < d; ++j) centers[c][j] += 0.15 * rng.normal();
    }

    Dataset ds;
    ds.C = C;
    ds.d = d;
    ds.x.reserve(n);
    ds.y.reserve(n);
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t count = n / C + (c < n % C ? 1 : 0);
        RngStream rng = RngStream::named(seed, "blob-points", c);
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<double> x(d);
            for (std::size_t j = 0; j < d; ++j) x[j] = centers[c][j] + spread * rng.normal();
            ds.x.push_back(std::move(x));
            ds.y.push_back(static_cast<int>(c));
        }
    }
    return ds;
}

std::vector<ShardDataset> dirichlet_label_partition(const Dataset& ds, std::size_t S,
                                                    double alpha, std::uint64_t seed) {
    return assemble_shards(ds, dirichlet_members(ds, S, alpha, seed), seed);
}

TransformBank make_transform_bank(std::size_t d, std::uint64_t seed) {
    TransformBank bank;
    bank.d = d;
    bank.mats.resize(kTransformCount);
    bank.mats[0].assign(d * d, 0.0);
    for (std::size_t j = 0; j < d; ++j) bank.mats[0][j * d + j] = 1.0;

    for (std::size_t r = 1; r < kTransformCount; ++r) {
        RngStream rng = RngStream::named(seed, "transform-bank", r);
        std::vector<double>& m = bank.mats[r];
        m.resize(d * d);
        // Gram-Schmidt over Gaussian rows; a.s. full rank, guarded anyway
        for (std::size_t row = 0; row < d; ++row) {
            for (;;) {
                double* v = m.data() + row * d;
                for (std::size_t j = 0; j < d; ++j) v[j] = rng.normal();
                for (std::size_t prev = 0; prev < row; ++prev) {
                    const double* p = m.data() + prev * d;
                    const double proj = kernels::dot(v, p, d);
                    kernels::axpy(d, -proj, p, v);
                }
                const double norm = std::sqrt(kernels::dot(v, v, d));
                if (norm > 1e-8) {
                    kernels::scale(d, 1.0 / norm, v);
                    break;
                }
            }
        }
    }
    return bank;
}

std::vector<double> apply_transform(const TransformBank& bank, int r,
                                    const std::vector<double>& x) {
    if (r < 0 || r >= static_cast<int>(bank.mats.size())) {
        throw StructuralError("transform index out of range");
    }
    if (x.size() != bank.d) throw StructuralError("transform dimension mismatch");
    std::vector<double> out(bank.d);
    kernels::matvec(bank.mats[static_cast<std::size_t>(r)].data(), x.data(), out.data(),
                    bank.d, bank.d);
    return out;
}

std::vector<ShardDataset> transform_partition(const Dataset& ds, std::size_t S,
                                              double alpha, std::uint64_t seed,
                                              bool combined_label_skew,
                                              double label_alpha) {
    if (alpha <= 0.0) throw ConfigError("transform alpha must be positive");
    const auto members = combined_label_skew
                             ? dirichlet_members(ds, S, label_alpha, seed)
                             : uniform_members(ds, S, seed);
    std::vector<ShardDataset> shards = assemble_shards(ds, members, seed);

    const TransformBank bank = make_transform_bank(ds.d, seed);
    for (std::size_t s = 0; s < shards.size(); ++s) {
        RngStream dir_rng = RngStream::named(seed, "transform-dir", s);
        const std::vector<double> dist = dir_rng.dirichlet(alpha, bank.mats.size());
        RngStream draw_rng = RngStream::named(seed, "transform-draw", s);
        for (std::size_t i = 0; i < shards[s].x.size(); ++i) {
            const int r = static_cast<int>(draw_categorical(draw_rng, dist));
            shards[s].side[i] = r;
            shards[s].x[i] = apply_transform(bank, r, shards[s].x[i]);
        }
    }
    return shards;
}

std::vector<std::vector<int>> make_permutations(std::size_t C, std::size_t n_perms,
                                                std::uint64_t seed) {
    std::vector<std::vector<int>> perms;
    std::uint64_t attempt = 0;
    while (perms.size() < n_perms) {
        std::vector<int> p(C);
        for (std::size_t i = 0; i < C; ++i) p[i] = static_cast<int>(i);
        RngStream rng = RngStream::named(seed, "perms", perms.size(), attempt);
        rng.shuffle(p);
        ++attempt;
        if (std::find(perms.begin(), perms.end(), p) != perms.end()) {
            if (attempt > 10000) throw ConfigError("cannot draw distinct permutations");
            continue;
        }
        perms.push_back(std::move(p));
        attempt = 0;
    }
    return perms;
}

PermutationPartition permutation_partition(const Dataset& ds, std::size_t S,
                                           const std::vector<std::vector<int>>& perms,
                                           std::uint64_t seed) {
    if (perms.empty()) throw ConfigError("need at least one permutation");
    for (const auto& p : perms) {
        std::vector<int> sorted = p;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] != static_cast<int>(i) || p.size() != ds.C) {
                throw ConfigError("invalid label permutation");
            }
        }
    }
    PermutationPartition out;
    out.shards = assemble_shards(ds, uniform_members(ds, S, seed), seed);
    out.assignment.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
        const std::size_t pid = s % perms.size();
        out.assignment[s] = static_cast<int>(pid);
        for (int& y : out.shards[s].y) y = perms[pid][static_cast<std::size_t>(y)];
    }
    return out;
}

std::string shards_to_csv(const std::vector<ShardDataset>& shards) {
    std::ostringstream oss;
    const std::size_t d = shards.empty() ? 0 : shards[0].d;
    oss << "shard,split,side,y";
    for (std::size_t j = 0; j < d; ++j) oss << ",x" << j;
    oss << "\n";
    const char* names[3] = {"train", "val", "test"};
    for (const ShardDataset& sh : shards) {
        const std::vector<std::size_t>* splits[3] = {&sh.splits.train, &sh.splits.val,
                                                     &sh.splits.test};
        for (int sp = 0; sp < 3; ++sp) {
            for (std::size_t i : *splits[sp]) {
                oss << sh.shard_id << ',' << names[sp] << ',' << sh.side[i] << ','
                    << sh.y[i];
                for (std::size_t j = 0; j < d; ++j) {
                    oss << ',' << format_double(sh.x[i][j]);
                }
                oss << "\n";
            }
        }
    }
    return oss.str();
}

std::vector<ShardDataset> shards_from_csv(const std::string& csv) {
    std::istringstream iss(csv);
    std::string line;
    if (!std::getline(iss, line)) throw StructuralError("empty shard csv");
    std::size_t d = 0;
    {
        std::size_t cols = 1;
        for (char ch : line) {
            if (ch == ',') ++cols;
        }
        if (cols < 5) throw StructuralError("shard csv header too short");
        d = cols - 4;
    }

    std::vector<ShardDataset> shards;
    int max_label = -1;
    while (std::getline(iss, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(row, field, ',')) fields.push_back(field);
        if (fields.size() != d + 4) throw StructuralError("shard csv row width mismatch");

        const int shard_id = std::stoi(fields[0]);
        if (shard_id < 0) throw StructuralError("negative shard id");
        if (static_cast<std::size_t>(shard_id) >= shards.size()) {
            shards.resize(static_cast<std::size_t>(shard_id) + 1);
        }
        ShardDataset& sh = shards[static_cast<std::size_t>(shard_id)];
        sh.shard_id = shard_id;
        sh.d = d;

        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = std::stod(fields[4 + j]);
        const std::size_t at = sh.x.size();
        sh.x.push_back(std::move(x));
        sh.side.push_back(std::stoi(fields[2]));
        sh.y.push_back(std::stoi(fields[3]));
        max_label = std::max(max_label, sh.y.back());

        if (fields[1] == "train") {
            sh.splits.train.push_back(at);
        } else if (fields[1] == "val") {
            sh.splits.val.push_back(at);
        } else if (fields[1] == "test") {
            sh.splits.test.push_back(at);
        } else {
            throw StructuralError("unknown split '" + fields[1] + "'");
        }
    }
    for (ShardDataset& sh : shards) {
        sh.C = static_cast<std::size_t>(max_label + 1);
        sh.all_train = sh.splits.val.empty() && sh.splits.test.empty();
    }
    return shards;
}

} // namespace fedmix::data
