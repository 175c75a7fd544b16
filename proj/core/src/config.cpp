#include "tuna/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace tuna {

const std::vector<RunConfig::KeySpec>& RunConfig::registry() {
    static const std::vector<KeySpec> specs = {
        {"preset", "tuna", "training preset: tuna | linear_probe | full_ft"},
        {"backbone.patch_size", "4", "patch embedding size"},
        {"backbone.embed_dims", "192,384,768,1536", "stage channel widths (doubling)"},
        {"backbone.depths", "2,2,18,2", "transformer blocks per stage"},
        {"backbone.num_heads", "6,12,24,48", "attention heads per stage"},
        {"backbone.window_size", "7", "attention window size"},
        {"backbone.mlp_ratio", "4.0", "MLP hidden width ratio"},
        {"backbone.dropout_p", "0.1", "dropout inside backbone MLPs"},
        {"backbone.init_checkpoint", "", "optional container with backbone weights"},
        {"tuna.kernel_sizes", "7,5,5,3", "depthwise kernel per stage"},
        {"tuna.bottleneck_dims", "64,64,96,192", "adapter bottleneck per stage"},
        {"tuna.structure", "parallel", "adapter wiring: parallel | sequential"},
        {"tuna.s1_init", "1e-6", "initial per-channel scale on the frozen branch"},
        {"tuna.s2_init", "0.0", "initial scalar scale on the adapter branch"},
        {"tuna.dropout_p", "0.1", "dropout inside the adapter"},
        {"tuna.adaptive_convolution", "true", "per-stage kernel schedule (else all = last entry)"},
        {"tuna.adaptive_embedding", "true", "per-stage bottleneck schedule (else all = first entry)"},
        {"head.channels", "64", "decode head common width"},
        {"head.num_classes", "3", "number of segmentation classes"},
        {"loss.ignore_index", "255", "mask value excluded from loss and metrics"},
        {"train.iters", "1000", "training iterations"},
        {"train.batch", "4", "batch size"},
        {"train.crop", "32", "square crop size for batch assembly"},
        {"train.seed", "", "master seed (required for train/gen-synth; env TUNA_SEED fallback)"},
        {"train.lr", "1e-4", "AdamW base learning rate"},
        {"train.weight_decay", "0.01", "AdamW decoupled weight decay"},
        {"train.warmup_iters", "100", "linear warmup iterations"},
        {"train.min_lr_ratio", "0.0", "cosine floor as a fraction of base lr"},
        {"train.eval_interval", "200", "evaluate every N iterations (0 = off)"},
        {"train.log_interval", "50", "log every N iterations (0 = off)"},
        {"train.out_dir", "runs/default", "output directory for checkpoint and metric log"},
        {"data.path", "", "dataset directory (empty = in-memory synthetic)"},
        {"data.num_images", "16", "synthetic: number of images"},
        {"data.size", "32", "synthetic: square image size"},
        {"data.noise_sigma", "0.1", "synthetic: Gaussian color noise"},
    };
    return specs;
}

RunConfig::RunConfig() {
    for (const KeySpec& spec : registry()) {
        values_[spec.key] = spec.default_value;
    }
}

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return "";
    }
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open config file '" + path.string() + "'");
    }
    std::stringstream buffer;
    buffer << is.rdbuf();
    load_text(buffer.str(), path.string());
}

void RunConfig::load_text(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + line + "'");
        }
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("unknown configuration key '" + key + "'");
    }
    it->second = value;
}

void RunConfig::apply_override(const std::string& key_eq_value) {
    const size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + key_eq_value + "'");
    }
    set(trim(key_eq_value.substr(0, eq)), trim(key_eq_value.substr(eq + 1)));
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) {
        throw ConfigError("unknown configuration key '" + key + "'");
    }
    return it->second;
}

bool RunConfig::has_value(const std::string& key) const {
    return !get(key).empty();
}

int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t pos = 0;
        const int64_t n = std::stoll(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return n;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
    }
}

uint64_t RunConfig::get_uint(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t pos = 0;
        const uint64_t n = std::stoull(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return n;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) {
            throw std::invalid_argument(v);
        }
        return d;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") {
        return true;
    }
    if (v == "false" || v == "0") {
        return false;
    }
    throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<int64_t> RunConfig::get_int_list(const std::string& key, size_t expected) const {
    const std::string& v = get(key);
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected comma-separated integers, got '" + v +
                              "'");
        }
    }
    if (out.size() != expected) {
        throw ConfigError("key '" + key + "': expected " + std::to_string(expected) +
                          " values, got " + std::to_string(out.size()));
    }
    return out;
}

std::string RunConfig::echo() const {
    std::ostringstream os;
    for (const KeySpec& spec : registry()) {
        os << "# " << spec.key << " = " << values_.at(spec.key) << '\n';
    }
    return os.str();
}

std::string RunConfig::serialized() const {
    std::ostringstream os;
    for (const KeySpec& spec : registry()) {
        os << spec.key << " = " << values_.at(spec.key) << '\n';
    }
    return os.str();
}

ModelConfig RunConfig::model_config() const {
    ModelConfig cfg;
    cfg.backbone.patch_size = get_int("backbone.patch_size");
    const auto dims = get_int_list("backbone.embed_dims", 4);
    const auto depths = get_int_list("backbone.depths", 4);
    const auto heads = get_int_list("backbone.num_heads", 4);
    std::copy(dims.begin(), dims.end(), cfg.backbone.embed_dims.begin());
    std::copy(depths.begin(), depths.end(), cfg.backbone.depths.begin());
    std::copy(heads.begin(), heads.end(), cfg.backbone.num_heads.begin());
    cfg.backbone.window_size = get_int("backbone.window_size");
    cfg.backbone.mlp_ratio = get_double("backbone.mlp_ratio");
    cfg.backbone.dropout_p = get_double("backbone.dropout_p");
    cfg.init_checkpoint = get("backbone.init_checkpoint");

    const auto kernels = get_int_list("tuna.kernel_sizes", 4);
    const auto bottlenecks = get_int_list("tuna.bottleneck_dims", 4);
    std::copy(kernels.begin(), kernels.end(), cfg.tuna.kernel_sizes.begin());
    std::copy(bottlenecks.begin(), bottlenecks.end(), cfg.tuna.bottleneck_dims.begin());
    const std::string& structure = get("tuna.structure");
    if (structure == "parallel") {
        cfg.tuna.structure = TunaStructure::parallel;
    } else if (structure == "sequential") {
        cfg.tuna.structure = TunaStructure::sequential;
    } else {
        throw ConfigError("key 'tuna.structure': expected parallel|sequential, got '" + structure +
                          "'");
    }
    cfg.tuna.s1_init = get_double("tuna.s1_init");
    cfg.tuna.s2_init = get_double("tuna.s2_init");
    cfg.tuna.dropout_p = get_double("tuna.dropout_p");
    cfg.tuna.adaptive_convolution = get_bool("tuna.adaptive_convolution");
    cfg.tuna.adaptive_embedding = get_bool("tuna.adaptive_embedding");

    cfg.head.channels = get_int("head.channels");
    cfg.head.num_classes = get_int("head.num_classes");
    cfg.ignore_index = static_cast<int32_t>(get_int("loss.ignore_index"));

    const std::string& preset = get("preset");
    if (preset == "tuna") {
        cfg.preset = Preset::tuna;
    } else if (preset == "linear_probe") {
        cfg.preset = Preset::linear_probe;
    } else if (preset == "full_ft") {
        cfg.preset = Preset::full_ft;
    } else {
        throw ConfigError("key 'preset': expected tuna|linear_probe|full_ft, got '" + preset +
                          "'");
    }
    cfg.seed = has_value("train.seed") ? get_uint("train.seed") : 0;
    cfg.validate();
    return cfg;
}

TrainConfig RunConfig::train_config() const {
    TrainConfig cfg;
    cfg.iters = get_int("train.iters");
    cfg.batch = get_int("train.batch");
    cfg.crop = get_int("train.crop");
    cfg.seed = has_value("train.seed") ? get_uint("train.seed") : 0;
    cfg.lr = get_double("train.lr");
    cfg.weight_decay = get_double("train.weight_decay");
    cfg.warmup_iters = get_int("train.warmup_iters");
    cfg.min_lr_ratio = get_double("train.min_lr_ratio");
    cfg.eval_interval = get_int("train.eval_interval");
    cfg.log_interval = get_int("train.log_interval");
    cfg.out_dir = get("train.out_dir");
    if (cfg.iters < 0 || cfg.batch < 1 || cfg.crop < 8) {
        throw ConfigError("train.*: iters must be >= 0, batch >= 1, crop >= 8");
    }
    return cfg;
}

SynthSpec RunConfig::synth_spec() const {
    SynthSpec spec;
    spec.num_images = get_int("data.num_images");
    spec.size = get_int("data.size");
    spec.num_classes = get_int("head.num_classes");
    spec.noise_sigma = get_double("data.noise_sigma");
    return spec;
}

}  // namespace tuna
