#include "fedmix/config.hpp"

#include "fedmix/errors.hpp"
#include "fedmix/serialize.hpp"

#include <charconv>
#include <cstdio>
#include <map>
#include <sstream>

namespace fedmix::config {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad_field(const std::string& field, const std::string& what) {
    throw ConfigError("config field " + field + ": " + what);
}

std::uint64_t parse_u64(const std::string& field, const std::string& v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        bad_field(field, "expected an unsigned integer, got '" + v + "'");
    return out;
}

double parse_f64(const std::string& field, const std::string& v) {
    double out = 0.0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        bad_field(field, "expected a number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& field, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad_field(field, "expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_widths(const std::string& field, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) bad_field(field, "empty width in '" + v + "'");
        out.push_back(static_cast<std::size_t>(parse_u64(field, item)));
    }
    if (out.empty()) bad_field(field, "expected a comma-separated width list");
    return out;
}

// (section, key) -> value, plus insertion order checks
struct KvTable {
    std::map<std::string, std::string> kv;

    const std::string* find(const std::string& section, const std::string& key) const {
        const auto it = kv.find(section + "." + key);
        return it == kv.end() ? nullptr : &it->second;
    }
    std::string require(const std::string& section, const std::string& key) const {
        const std::string* v = find(section, key);
        if (!v) bad_field(section + "." + key, "required but missing");
        return *v;
    }
};

const char* const kSections[] = {"dataset", "partition", "training", "eval"};

bool known_section(const std::string& s) {
    for (const char* name : kSections)
        if (s == name) return true;
    return false;
}

bool known_key(const std::string& section, const std::string& key) {
    static const std::map<std::string, std::vector<std::string>> keys = {
        {"dataset", {"C", "d", "n", "spread"}},
        {"partition",
         {"scheme", "S", "alpha", "n_permutations", "combined", "label_alpha"}},
        {"training",
         {"algorithm", "K", "beta_entropy", "gamma", "eta", "clients_per_round",
          "E", "B", "lr_client", "lr_server", "side_info", "seed", "entropy_reg",
          "gate_grad_to_features", "hidden", "rounds"}},
        {"eval", {"eval_every", "phi_snapshot_every", "finetune_epochs", "output_dir"}},
    };
    const auto it = keys.find(section);
    if (it == keys.end()) return false;
    for (const std::string& k : it->second)
        if (k == key) return true;
    return false;
}

} // namespace

MlpSpec ExperimentConfig::mlp_spec() const {
    std::vector<std::size_t> widths;
    widths.push_back(d);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(C);
    return MlpSpec{std::move(widths)};
}

std::size_t ExperimentConfig::c_side() const {
    return round.side_info == federation::SideInfoMode::label ? C
                                                              : data::kTransformCount;
}

void ExperimentConfig::validate() const {
    if (rounds < 1) bad_field("training.rounds", "must be >= 1");
    if (eval_every < 1) bad_field("eval.eval_every", "must be >= 1");
    if (C < 2) bad_field("dataset.C", "must be >= 2");
    if (d < 2) bad_field("dataset.d", "must be >= 2");
    if (n < C) bad_field("dataset.n", "must be >= C");
    if (spread < 0.0) bad_field("dataset.spread", "must be >= 0");
    if (S < 1) bad_field("partition.S", "must be >= 1");
    if (alpha <= 0.0) bad_field("partition.alpha", "must be > 0");
    if (scheme != "dirichlet_label" && scheme != "transform_skew" &&
        scheme != "label_permutation")
        bad_field("partition.scheme", "unknown scheme '" + scheme + "'");
    if (scheme == "label_permutation" && n_permutations < 1)
        bad_field("partition.n_permutations", "must be >= 1");
    if (combined && label_alpha <= 0.0)
        bad_field("partition.label_alpha", "must be > 0");
    if (hidden.empty()) bad_field("training.hidden", "must list at least one width");
    for (std::size_t w : hidden)
        if (w < 1) bad_field("training.hidden", "widths must be >= 1");
    if (round.clients_per_round > S)
        bad_field("training.clients_per_round", "exceeds partition.S");
    if (round.side_info == federation::SideInfoMode::transform_index &&
        scheme != "transform_skew")
        bad_field("training.side_info",
                  "transform_index requires the transform_skew scheme");
    try {
        round.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("config field training.*: ") + e.what());
    }
}

ExperimentConfig parse_config(const std::string& text) {
    KvTable table;
    std::string section;
    bool saw_version = false;

    std::stringstream ss(text);
    std::string raw;
    std::size_t lineno = 0;
    while (std::getline(ss, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!known_section(section))
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unknown section [" + section + "]");
            continue;
        }

        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) bad_field(section + ".?", "empty key");

        if (section.empty()) {
            if (key != "config_version")
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": key '" + key + "' before any section");
            if (value != "1")
                bad_field("config_version", "unsupported version '" + value + "'");
            saw_version = true;
            continue;
        }
        if (!known_key(section, key))
            bad_field(section + "." + key, "unknown key");
        if (!table.kv.emplace(section + "." + key, value).second)
            bad_field(section + "." + key, "duplicate key");
    }
    if (!saw_version) bad_field("config_version", "required but missing");

    ExperimentConfig cfg;
    cfg.C = parse_u64("dataset.C", table.require("dataset", "C"));
    cfg.d = parse_u64("dataset.d", table.require("dataset", "d"));
    cfg.n = parse_u64("dataset.n", table.require("dataset", "n"));
    if (const auto* v = table.find("dataset", "spread"))
        cfg.spread = parse_f64("dataset.spread", *v);

    cfg.scheme = table.require("partition", "scheme");
    cfg.S = parse_u64("partition.S", table.require("partition", "S"));
    if (const auto* v = table.find("partition", "alpha"))
        cfg.alpha = parse_f64("partition.alpha", *v);
    if (const auto* v = table.find("partition", "n_permutations"))
        cfg.n_permutations = parse_u64("partition.n_permutations", *v);
    if (const auto* v = table.find("partition", "combined"))
        cfg.combined = parse_bool("partition.combined", *v);
    if (const auto* v = table.find("partition", "label_alpha"))
        cfg.label_alpha = parse_f64("partition.label_alpha", *v);

    cfg.round.algorithm =
        federation::algorithm_from_string(table.require("training", "algorithm"));
    cfg.round.K = parse_u64("training.K", table.require("training", "K"));
    cfg.round.seed = parse_u64("training.seed", table.require("training", "seed"));
    cfg.rounds = parse_u64("training.rounds", table.require("training", "rounds"));
    if (const auto* v = table.find("training", "beta_entropy"))
        cfg.round.beta_entropy = parse_f64("training.beta_entropy", *v);
    if (const auto* v = table.find("training", "gamma"))
        cfg.round.gamma = parse_f64("training.gamma", *v);
    if (const auto* v = table.find("training", "eta"))
        cfg.round.eta = parse_f64("training.eta", *v);
    if (const auto* v = table.find("training", "clients_per_round"))
        cfg.round.clients_per_round = parse_u64("training.clients_per_round", *v);
    if (const auto* v = table.find("training", "E"))
        cfg.round.E = parse_u64("training.E", *v);
    if (const auto* v = table.find("training", "B"))
        cfg.round.B = parse_u64("training.B", *v);
    if (const auto* v = table.find("training", "lr_client"))
        cfg.round.lr_client = parse_f64("training.lr_client", *v);
    if (const auto* v = table.find("training", "lr_server"))
        cfg.round.lr_server = parse_f64("training.lr_server", *v);
    if (const auto* v = table.find("training", "side_info"))
        cfg.round.side_info = federation::side_info_from_string(*v);
    if (const auto* v = table.find("training", "entropy_reg"))
        cfg.round.entropy_reg = parse_bool("training.entropy_reg", *v);
    if (const auto* v = table.find("training", "gate_grad_to_features"))
        cfg.round.gate_grad_to_features =
            parse_bool("training.gate_grad_to_features", *v);
    if (const auto* v = table.find("training", "hidden"))
        cfg.hidden = parse_widths("training.hidden", *v);

    if (const auto* v = table.find("eval", "eval_every"))
        cfg.eval_every = parse_u64("eval.eval_every", *v);
    if (const auto* v = table.find("eval", "phi_snapshot_every"))
        cfg.phi_snapshot_every = parse_u64("eval.phi_snapshot_every", *v);
    if (const auto* v = table.find("eval", "finetune_epochs"))
        cfg.finetune_epochs = parse_u64("eval.finetune_epochs", *v);
    if (const auto* v = table.find("eval", "output_dir")) cfg.output_dir = *v;

    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    return parse_config(read_text_file(path));
}

std::string render_config(const ExperimentConfig& cfg) {
    std::string out;
    out += "config_version = 1\n\n";
    out += "[dataset]\n";
    out += "C = " + std::to_string(cfg.C) + "\n";
    out += "d = " + std::to_string(cfg.d) + "\n";
    out += "n = " + std::to_string(cfg.n) + "\n";
    out += "spread = " + format_double(cfg.spread) + "\n\n";
    out += "[partition]\n";
    out += "scheme = " + cfg.scheme + "\n";
    out += "S = " + std::to_string(cfg.S) + "\n";
    out += "alpha = " + format_double(cfg.alpha) + "\n";
    out += "n_permutations = " + std::to_string(cfg.n_permutations) + "\n";
    out += std::string("combined = ") + (cfg.combined ? "true" : "false") + "\n";
    out += "label_alpha = " + format_double(cfg.label_alpha) + "\n\n";
    out += "[training]\n";
    out += "algorithm = " + federation::to_string(cfg.round.algorithm) + "\n";
    out += "K = " + std::to_string(cfg.round.K) + "\n";
    std::string hidden;
    for (std::size_t w : cfg.hidden) {
        if (!hidden.empty()) hidden += ",";
        hidden += std::to_string(w);
    }
    out += "hidden = " + hidden + "\n";
    out += "rounds = " + std::to_string(cfg.rounds) + "\n";
    out += "beta_entropy = " + format_double(cfg.round.beta_entropy) + "\n";
    out += "gamma = " + format_double(cfg.round.gamma) + "\n";
    out += "eta = " + format_double(cfg.round.eta) + "\n";
    out += "clients_per_round = " + std::to_string(cfg.round.clients_per_round) + "\n";
    out += "E = " + std::to_string(cfg.round.E) + "\n";
    out += "B = " + std::to_string(cfg.round.B) + "\n";
    out += "lr_client = " + format_double(cfg.round.lr_client) + "\n";
    out += "lr_server = " + format_double(cfg.round.lr_server) + "\n";
    out += "side_info = " + federation::to_string(cfg.round.side_info) + "\n";
    out += "seed = " + std::to_string(cfg.round.seed) + "\n";
    out += std::string("entropy_reg = ") + (cfg.round.entropy_reg ? "true" : "false") +
           "\n";
    out += std::string("gate_grad_to_features = ") +
           (cfg.round.gate_grad_to_features ? "true" : "false") + "\n\n";
    out += "[eval]\n";
    out += "eval_every = " + std::to_string(cfg.eval_every) + "\n";
    out += "phi_snapshot_every = " + std::to_string(cfg.phi_snapshot_every) + "\n";
    out += "finetune_epochs = " + std::to_string(cfg.finetune_epochs) + "\n";
    out += "output_dir = " + cfg.output_dir + "\n";
    return out;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string text = render_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : text) {
        h ^= static_cast<unsigned char>(ch);
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace fedmix::config
