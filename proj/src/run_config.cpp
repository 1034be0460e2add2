#include "weakpair/run_config.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "weakpair/text_io.hpp"

namespace weakpair::cli {

const char* grid_name(Grid g) {
    switch (g) {
        case Grid::Table5: return "table5";
        case Grid::Mappings: return "mappings";
        case Grid::All: return "all";
    }
    return "table5";
}

Grid parse_grid(std::string_view name) {
    if (name == "table5") return Grid::Table5;
    if (name == "mappings") return Grid::Mappings;
    if (name == "all") return Grid::All;
    throw std::invalid_argument("unknown ablation grid '" + std::string(name) + "'");
}

namespace {

std::uint64_t to_u64(std::string_view v, std::string_view key) {
    const long long n = parse_int(v, key);
    if (n < 0) throw std::invalid_argument(std::string(key) + " must be nonnegative");
    return static_cast<std::uint64_t>(n);
}

std::vector<std::uint64_t> to_seed_list(std::string_view v) {
    std::vector<std::uint64_t> out;
    for (auto piece : split(v, ',')) out.push_back(to_u64(trim(piece), "ablate.seeds"));
    if (out.empty()) throw std::invalid_argument("ablate.seeds is empty");
    return out;
}

void set_gen(data::GenConfig& c, const std::string& key, const std::string& v) {
    if (key == "num_identities") c.num_identities = to_u64(v, key);
    else if (key == "views_per_identity") c.views_per_identity = to_u64(v, key);
    else if (key == "latent_dim") c.latent_dim = to_u64(v, key);
    else if (key == "raw_dim_image") c.raw_dim_image = to_u64(v, key);
    else if (key == "raw_dim_text") c.raw_dim_text = to_u64(v, key);
    else if (key == "view_noise") c.view_noise = parse_double(v, key);
    else if (key == "annotation_mask_rate") c.annotation_mask_rate = parse_double(v, key);
    else if (key == "seed") c.seed = to_u64(v, key);
    else throw std::invalid_argument("unknown key 'gen." + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& full_key, const std::string& value) {
    const auto dot = full_key.find('.');
    if (dot == std::string::npos) {
        throw ConfigError("config key '" + full_key + "' must look like section.key");
    }
    const std::string section = full_key.substr(0, dot);
    const std::string key = full_key.substr(dot + 1);
    const std::string v(trim(value));
    try {
        if (section == "gen") {
            set_gen(gen, key, v);
        } else if (section == "split") {
            if (key == "train_fraction") train_fraction = parse_double(v, key);
            else if (key == "seed") split_seed = to_u64(v, key);
            else throw std::invalid_argument("unknown key '" + full_key + "'");
        } else if (section == "train") {
            train.set(key, v);
        } else if (section == "eval") {
            if (key == "margin_seed") margin_seed = to_u64(v, key);
            else throw std::invalid_argument("unknown key '" + full_key + "'");
        } else if (section == "ablate") {
            if (key == "grid") grid = parse_grid(v);
            else if (key == "seeds") seeds = to_seed_list(v);
            else throw std::invalid_argument("unknown key '" + full_key + "'");
        } else if (section == "gradcheck") {
            if (key == "points") gradcheck.points = to_u64(v, key);
            else if (key == "op_points") gradcheck.op_points = to_u64(v, key);
            else if (key == "eps") gradcheck.eps = parse_double(v, key);
            else if (key == "tol") gradcheck.tol = parse_double(v, key);
            else if (key == "seed") gradcheck.seed = to_u64(v, key);
            else throw std::invalid_argument("unknown key '" + full_key + "'");
        } else {
            throw std::invalid_argument("unknown section '" + section + "'");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
}

void RunConfig::validate() const {
    try {
        gen.validate();
        train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("split.train_fraction must lie in (0, 1)");
    }
    if (!(gradcheck.eps >= 1e-7 && gradcheck.eps <= 1e-3)) {
        throw ConfigError("gradcheck.eps must lie in [1e-7, 1e-3]");
    }
    if (!(gradcheck.tol > 0.0)) throw ConfigError("gradcheck.tol must be positive");
}

void RunConfig::write(std::ostream& os) const {
    os << "[gen]\n"
       << "num_identities = " << gen.num_identities << '\n'
       << "views_per_identity = " << gen.views_per_identity << '\n'
       << "latent_dim = " << gen.latent_dim << '\n'
       << "raw_dim_image = " << gen.raw_dim_image << '\n'
       << "raw_dim_text = " << gen.raw_dim_text << '\n'
       << "view_noise = " << format_shortest(gen.view_noise) << '\n'
       << "annotation_mask_rate = " << format_shortest(gen.annotation_mask_rate) << '\n'
       << "seed = " << gen.seed << "\n\n";
    os << "[split]\n"
       << "train_fraction = " << format_shortest(train_fraction) << '\n'
       << "seed = " << split_seed << "\n\n";
    os << "[train]\n";
    for (const auto& [k, v] : train.to_pairs()) os << k << " = " << v << '\n';
    os << "\n[eval]\nmargin_seed = " << margin_seed << "\n\n";
    os << "[ablate]\ngrid = " << grid_name(grid) << "\nseeds = ";
    for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
    os << "\n\n[gradcheck]\n"
       << "points = " << gradcheck.points << '\n'
       << "op_points = " << gradcheck.op_points << '\n'
       << "eps = " << format_shortest(gradcheck.eps) << '\n'
       << "tol = " << format_shortest(gradcheck.tol) << '\n'
       << "seed = " << gradcheck.seed << '\n';
}

RunConfig parse_config(std::istream& is, RunConfig base) {
    std::string section;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string_view text = trim(line);
        if (text.empty()) continue;
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        if (text.front() == '[') {
            if (text.back() != ']') throw ConfigError(where + "unterminated section header");
            section = std::string(trim(text.substr(1, text.size() - 2)));
            continue;
        }
        const auto eq = text.find('=');
        if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
        if (section.empty()) throw ConfigError(where + "key outside any [section]");
        try {
            base.set(section + "." + std::string(trim(text.substr(0, eq))),
                     std::string(trim(text.substr(eq + 1))));
        } catch (const ConfigError& e) {
            throw ConfigError(where + e.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config " + path.string());
    return parse_config(is, std::move(base));
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override '" + assignment + "' must look like section.key=value");
    }
    cfg.set(std::string(trim(assignment.substr(0, eq))), assignment.substr(eq + 1));
}

}  // namespace weakpair::cli
