#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cardiogen/generator/generator.hpp"
#include "cardiogen/losses/trainer.hpp"
#include "cardiogen/media.hpp"
#include "cardiogen/sampler/sampler.hpp"
#include "cardiogen/synth/synth.hpp"
#include "cardiogen/tokenizer/tokenizer.hpp"

namespace cardiogen {

enum class KeyType { Size, U64, Real, Bool, String, Choice };

struct KeySpec {
    std::string key;
    KeyType type;
    std::string default_value;
    std::string help;
    std::vector<std::string> choices;  // Choice only
};

std::uint64_t fnv1a64(std::string_view data);

// Flat `key = value` run configuration. Every key has a typed default;
// unknown keys and malformed values raise ConfigError naming the origin.
class RunConfig {
public:
    RunConfig();

    static const std::vector<KeySpec>& schema();
    static RunConfig from_file(const fs::path& path);

    // Lines are `key = value`; blank lines and lines starting with '#' are
    // skipped.
    void parse_text(const std::string& text, const std::string& origin);
    // `key=value` as given to --set.
    void apply_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value, const std::string& origin = "set");

    const std::string& raw(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    double get_real(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    const std::string& get_string(const std::string& key) const;

    // Sorted `key = value` lines with defaults applied.
    std::string resolved() const;
    std::uint64_t hash() const { return fnv1a64(resolved()); }
    std::string hash_hex() const;

    // Cross-key checks that single values cannot express.
    void validate() const;

    std::uint64_t seed() const { return get_u64("seed"); }
    DatasetRanges dataset_ranges() const;
    // Architecture keys only; clip extents come from the corpus.
    TokenizerConfig tokenizer_config(std::size_t height, std::size_t width, std::size_t channels,
                                     std::size_t frames) const;
    TokenizerTrainConfig tokenizer_train_config() const;
    DiscriminatorConfig discriminator_config() const;
    // Vocabulary, grid and conditioning length come from the tokenizer and corpus.
    GeneratorConfig generator_config(const TokenizerConfig& tok, std::size_t cond_len, std::size_t ecg_leads) const;
    GeneratorTrainConfig generator_train_config() const;
    // Sampling knobs only; the ECG and optional frames are filled by the caller.
    GenerationRequest generation_request() const;

private:
    const KeySpec& spec(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

const char* build_id();

}  // namespace cardiogen
