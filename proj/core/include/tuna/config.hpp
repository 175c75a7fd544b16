#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tuna/dataset.hpp"
#include "tuna/model.hpp"
#include "tuna/trainer.hpp"

namespace tuna {

// Flat-nested key-value configuration (`section.key = value` lines, '#'
// comments). Every key has a documented default; unknown keys are rejected
// so typos cannot silently change an experiment.
class RunConfig {
  public:
    struct KeySpec {
        const char* key;
        const char* default_value;
        const char* doc;
    };

    static const std::vector<KeySpec>& registry();

    RunConfig();  // all defaults

    void load_file(const std::filesystem::path& path);
    // Same grammar as a config file; `origin` labels parse errors.
    void load_text(const std::string& text, const std::string& origin);
    void set(const std::string& key, const std::string& value);
    // Accepts "key=value" as passed to --set.
    void apply_override(const std::string& key_eq_value);

    const std::string& get(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    uint64_t get_uint(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int64_t> get_int_list(const std::string& key, size_t expected) const;

    bool has_value(const std::string& key) const;  // non-empty

    // "# key = value" lines for the run preamble, in registry order.
    std::string echo() const;
    // Plain "key = value" lines; parses back losslessly (checkpoint embed).
    std::string serialized() const;

    ModelConfig model_config() const;
    TrainConfig train_config() const;
    SynthSpec synth_spec() const;

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace tuna
