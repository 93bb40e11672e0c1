#include "cardiogen/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "cardiogen/numerics/io.hpp"

namespace cardiogen {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

KeySpec sz(std::string k, std::size_t v, std::string help) {
    return {std::move(k), KeyType::Size, std::to_string(v), std::move(help), {}};
}
KeySpec real(std::string k, std::string v, std::string help) {
    return {std::move(k), KeyType::Real, std::move(v), std::move(help), {}};
}
KeySpec flag(std::string k, bool v, std::string help) {
    return {std::move(k), KeyType::Bool, v ? "true" : "false", std::move(help), {}};
}
KeySpec str(std::string k, std::string help) { return {std::move(k), KeyType::String, "", std::move(help), {}}; }
KeySpec choice(std::string k, std::vector<std::string> c, std::string help) {
    std::string d = c.front();
    return {std::move(k), KeyType::Choice, std::move(d), std::move(help), std::move(c)};
}

std::vector<KeySpec> build_schema() {
    std::vector<KeySpec> s = {
        {"seed", KeyType::U64, "0", "master seed; every stream is derived from it", {}},

        sz("data.n_clips", 200, "clips written by datagen"),
        real("data.bpm_lo", "75", "heart rate range"),
        real("data.bpm_hi", "75", ""),
        real("data.ef_lo", "0.2", "ejection fraction range"),
        real("data.ef_hi", "0.6", ""),
        real("data.r_ed_lo", "10", "end-diastolic radius range in pixels"),
        real("data.r_ed_hi", "12", ""),
        real("data.noise_std", "0.01", "ECG additive noise"),
        real("data.r_amp_ef_slope", "2.5", "R amplitude = 1 + slope (ef - ef_lo)"),
        real("data.contrast_jitter", "0.15", "per-clip contrast factor range 1 +- jitter"),
        sz("data.height", 32, ""),
        sz("data.width", 32, ""),
        sz("data.frames", 5, "frames per clip, T + 1"),
        sz("data.phases", 4, "quarter-beat start phases"),
        sz("data.leads", 1, ""),
        sz("data.sample_rate_hz", 100, ""),

        str("paths.corpus", "corpus directory read by training and evaluation"),
        str("paths.tokenizer", "tokenizer checkpoint directory"),
        str("paths.generator", "generator checkpoint directory"),

        sz("tokenizer.patch_h", 8, ""),
        sz("tokenizer.patch_w", 8, ""),
        sz("tokenizer.patch_t", 2, ""),
        sz("tokenizer.dim", 64, ""),
        sz("tokenizer.depth_spatial", 2, ""),
        sz("tokenizer.depth_temporal", 2, ""),
        sz("tokenizer.heads", 4, ""),
        sz("tokenizer.head_dim", 16, ""),
        sz("tokenizer.ff_mult", 4, ""),
        choice("tokenizer.quantizer", {"lfq", "vq"}, ""),
        sz("tokenizer.bits", 10, "code bits K; vocabulary 2^K"),
        real("tokenizer.beta", "0.25", "VQ codebook loss weight"),
        real("tokenizer.lfq_beta", "0.005", "LFQ commitment weight"),

        sz("disc.patch", 4, ""),
        sz("disc.width1", 32, ""),
        sz("disc.width2", 64, ""),
        real("disc.slope", "0.2", "leaky ReLU slope"),
        sz("percep.patch", 4, "random-projection feature extractor tile"),
        sz("percep.width", 16, "features per tile"),

        sz("tok_train.steps", 3000, ""),
        sz("tok_train.batch", 8, ""),
        real("tok_train.lr", "1e-3", ""),
        real("tok_train.disc_lr", "2e-4", ""),
        real("tok_train.beta1", "0.9", ""),
        real("tok_train.beta2", "0.99", ""),
        real("tok_train.clip_norm", "1", ""),
        real("tok_train.gan_warmup_frac", "0.2", "fraction of steps before the adversarial terms start"),
        sz("tok_train.percep_frames", 2, "frames per clip in the perceptual loss"),
        real("tok_train.adaptive_eps", "1e-6", ""),
        real("tok_train.adaptive_clamp", "1e4", ""),
        real("tok_train.lr_min_frac", "0.1", ""),
        sz("tok_train.log_every", 100, ""),

        sz("generator.dim", 128, ""),
        sz("generator.depth", 4, ""),
        sz("generator.heads", 4, ""),
        sz("generator.head_dim", 32, ""),
        sz("generator.ff_mult", 4, ""),
        sz("generator.ecg_patch", 20, "ECG samples per patch"),
        flag("generator.ecg_trainable", true, ""),
        sz("generator.critic_dim", 64, ""),
        sz("generator.critic_depth", 2, ""),
        sz("generator.critic_heads", 4, ""),
        real("generator.p_drop", "0.1", "probability of training with the null condition"),
        real("generator.patch_mask_rate", "0.25", "ECG patch masking rate"),

        sz("gen_train.steps", 3000, ""),
        sz("gen_train.batch", 16, ""),
        real("gen_train.lr", "5e-4", ""),
        real("gen_train.critic_lr", "2e-4", ""),
        real("gen_train.beta1", "0.9", ""),
        real("gen_train.beta2", "0.99", ""),
        real("gen_train.clip_norm", "1", ""),
        sz("gen_train.warmup_steps", 100, ""),
        real("gen_train.lr_min_frac", "0.1", ""),
        real("gen_train.ema_decay", "0.995", ""),
        sz("gen_train.ema_every", 10, ""),
        flag("gen_train.train_critic", true, ""),
        sz("gen_train.log_every", 100, ""),

        choice("generate.mode", {"ecg_only", "image_plus_ecg", "continuation"}, ""),
        str("generate.ecg", "ECG file(s); several separated by ';' generate one chunk each"),
        str("generate.first_frame", "clip (.ept or PGM directory) whose frame 0 is pinned"),
        str("generate.prev_clip", "clip continued in continuation mode"),
        real("generate.lambda_cfg", "1.5", "guidance scale"),
        sz("generate.steps", 12, "decode iterations"),
        real("generate.temperature", "1", ""),
        real("generate.choice_temperature", "4.5", ""),
        sz("generate.k_overlap", 3, "frames re-encoded between chunks"),
        flag("generate.critic_remask", false, "rank samples by the token critic"),
        flag("generate.use_ema", false, "sample with the EMA weights"),

        choice("eval.mode", {"generation", "reconstruction"}, ""),
        sz("eval.n_clips", 20, "leading corpus clips evaluated; 0 means all"),
        real("eval.ef_tolerance", "0.15", "absolute EF error counted as a hit"),
        sz("eval.phase_tolerance", 1, "frames between ED and an R peak"),

        str("inspect.clip", "clip (.ept or PGM directory) to tokenize"),
    };
    std::sort(s.begin(), s.end(), [](const KeySpec& a, const KeySpec& b) { return a.key < b.key; });
    return s;
}

bool parse_unsigned(const std::string& v, std::uint64_t& out) {
    if (v.empty() || v[0] == '-' || v[0] == '+') {
        return false;
    }
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    return ec == std::errc() && p == v.data() + v.size();
}

bool parse_real(const std::string& v, double& out) {
    if (v.empty()) {
        return false;
    }
    char* end = nullptr;
    out = std::strtod(v.c_str(), &end);
    return end == v.c_str() + v.size() && std::isfinite(out);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

const char* build_id() {
#ifdef CARDIOGEN_BUILD_ID
    return CARDIOGEN_BUILD_ID;
#else
    return "unknown";
#endif
}

const std::vector<KeySpec>& RunConfig::schema() {
    static const std::vector<KeySpec> s = build_schema();
    return s;
}

RunConfig::RunConfig() {
    for (const auto& k : schema()) {
        values_[k.key] = k.default_value;
    }
}

RunConfig RunConfig::from_file(const fs::path& path) {
    if (!fs::exists(path)) {
        throw MissingArtifactError("config file not found: '" + path.string() + "'");
    }
    RunConfig c;
    c.parse_text(read_text_file(path), path.string());
    return c;
}

const KeySpec& RunConfig::spec(const std::string& key) const {
    const auto& s = schema();
    auto it = std::lower_bound(s.begin(), s.end(), key, [](const KeySpec& a, const std::string& k) { return a.key < k; });
    if (it == s.end() || it->key != key) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    return *it;
}

void RunConfig::parse_text(const std::string& text, const std::string& origin) {
    std::istringstream is(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(is, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') {
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(n) + ": expected 'key = value', got '" + t + "'");
        }
        set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)),
            origin + ":" + std::to_string(n));
    }
}

void RunConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("--set expects key=value, got '" + assignment + "'");
    }
    set(trim(std::string_view(assignment).substr(0, eq)), trim(std::string_view(assignment).substr(eq + 1)),
        "--set");
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
    const KeySpec* k = nullptr;
    try {
        k = &spec(key);
    } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    auto bad = [&](const std::string& want) {
        return ConfigError(origin + ": '" + key + "' expects " + want + ", got '" + value + "'");
    };
    std::string v = value;
    switch (k->type) {
        case KeyType::Size:
        case KeyType::U64: {
            std::uint64_t u = 0;
            if (!parse_unsigned(value, u)) {
                throw bad("a non-negative integer");
            }
            v = std::to_string(u);
            break;
        }
        case KeyType::Real: {
            double d = 0;
            if (!parse_real(value, d)) {
                throw bad("a finite number");
            }
            break;
        }
        case KeyType::Bool:
            if (value == "1" || value == "true") {
                v = "true";
            } else if (value == "0" || value == "false") {
                v = "false";
            } else {
                throw bad("true or false");
            }
            break;
        case KeyType::Choice:
            if (std::find(k->choices.begin(), k->choices.end(), value) == k->choices.end()) {
                std::string all;
                for (const auto& c : k->choices) {
                    all += (all.empty() ? "" : "|") + c;
                }
                throw bad(all);
            }
            break;
        case KeyType::String:
            break;
    }
    values_[key] = v;
}

const std::string& RunConfig::raw(const std::string& key) const {
    spec(key);
    return values_.at(key);
}

std::size_t RunConfig::get_size(const std::string& key) const {
    return static_cast<std::size_t>(std::stoull(raw(key)));
}
std::uint64_t RunConfig::get_u64(const std::string& key) const { return std::stoull(raw(key)); }
double RunConfig::get_real(const std::string& key) const { return std::strtod(raw(key).c_str(), nullptr); }
bool RunConfig::get_bool(const std::string& key) const { return raw(key) == "true"; }
const std::string& RunConfig::get_string(const std::string& key) const { return raw(key); }

std::string RunConfig::resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k + " = " + v + "\n";
    }
    return out;
}

std::string RunConfig::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

void RunConfig::validate() const {
    dataset_ranges().validate();
    auto positive = [&](const char* key) {
        if (get_size(key) == 0) {
            throw ConfigError(std::string(key) + " must be positive");
        }
    };
    for (const char* k : {"data.n_clips", "tok_train.steps", "tok_train.batch", "tok_train.log_every",
                          "gen_train.steps", "gen_train.batch", "gen_train.log_every", "generate.steps"}) {
        positive(k);
    }
    auto unit = [&](const char* key) {
        const double v = get_real(key);
        if (v < 0 || v > 1) {
            throw ConfigError(std::string(key) + "=" + raw(key) + " must lie in [0, 1]");
        }
    };
    for (const char* k : {"generator.p_drop", "generator.patch_mask_rate", "tok_train.gan_warmup_frac",
                          "tok_train.lr_min_frac", "gen_train.lr_min_frac", "gen_train.ema_decay"}) {
        unit(k);
    }
    for (const char* k : {"tok_train.lr", "tok_train.disc_lr", "gen_train.lr", "gen_train.critic_lr"}) {
        if (!(get_real(k) > 0)) {
            throw ConfigError(std::string(k) + " must be positive");
        }
    }
    // Mode-specific inputs are checked by the generate command.
    auto req = generation_request();
    req.mode = GenerationMode::EcgOnly;
    req.validate();
    // Extents are checked again against the corpus; this catches bad
    // architecture keys before any work starts.
    tokenizer_config(get_size("data.height"), get_size("data.width"), 1, get_size("data.frames")).validate();
}

DatasetRanges RunConfig::dataset_ranges() const {
    DatasetRanges r;
    r.bpm_lo = get_real("data.bpm_lo");
    r.bpm_hi = get_real("data.bpm_hi");
    r.ef_lo = get_real("data.ef_lo");
    r.ef_hi = get_real("data.ef_hi");
    r.r_ed_lo = get_real("data.r_ed_lo");
    r.r_ed_hi = get_real("data.r_ed_hi");
    r.noise_std = get_real("data.noise_std");
    r.r_amp_ef_slope = get_real("data.r_amp_ef_slope");
    r.contrast_jitter = get_real("data.contrast_jitter");
    r.height = get_size("data.height");
    r.width = get_size("data.width");
    r.frames = get_size("data.frames");
    r.phases = get_size("data.phases");
    r.leads = get_size("data.leads");
    r.sample_rate_hz = static_cast<int>(get_size("data.sample_rate_hz"));
    return r;
}

TokenizerConfig RunConfig::tokenizer_config(std::size_t height, std::size_t width, std::size_t channels,
                                            std::size_t frames) const {
    TokenizerConfig c;
    c.height = height;
    c.width = width;
    c.channels = channels;
    c.frames = frames;
    c.patch_h = get_size("tokenizer.patch_h");
    c.patch_w = get_size("tokenizer.patch_w");
    c.patch_t = get_size("tokenizer.patch_t");
    c.dim = get_size("tokenizer.dim");
    c.depth_spatial = get_size("tokenizer.depth_spatial");
    c.depth_temporal = get_size("tokenizer.depth_temporal");
    c.heads = get_size("tokenizer.heads");
    c.head_dim = get_size("tokenizer.head_dim");
    c.ff_mult = get_size("tokenizer.ff_mult");
    c.quantizer = get_string("tokenizer.quantizer") == "vq" ? QuantizerKind::Vq : QuantizerKind::Lfq;
    c.bits = get_size("tokenizer.bits");
    c.beta = static_cast<Real>(get_real("tokenizer.beta"));
    c.lfq_beta = static_cast<Real>(get_real("tokenizer.lfq_beta"));
    return c;
}

TokenizerTrainConfig RunConfig::tokenizer_train_config() const {
    TokenizerTrainConfig c;
    c.steps = get_size("tok_train.steps");
    c.batch = get_size("tok_train.batch");
    c.lr = static_cast<Real>(get_real("tok_train.lr"));
    c.disc_lr = static_cast<Real>(get_real("tok_train.disc_lr"));
    c.beta1 = static_cast<Real>(get_real("tok_train.beta1"));
    c.beta2 = static_cast<Real>(get_real("tok_train.beta2"));
    c.clip_norm = static_cast<Real>(get_real("tok_train.clip_norm"));
    c.gan_warmup_frac = get_real("tok_train.gan_warmup_frac");
    c.percep_frames = get_size("tok_train.percep_frames");
    c.adaptive_eps = get_real("tok_train.adaptive_eps");
    c.adaptive_clamp = get_real("tok_train.adaptive_clamp");
    c.lr_min_frac = get_real("tok_train.lr_min_frac");
    c.seed = mix_seed(seed(), 4);
    return c;
}

DiscriminatorConfig RunConfig::discriminator_config() const {
    DiscriminatorConfig c;
    c.patch = get_size("disc.patch");
    c.width1 = get_size("disc.width1");
    c.width2 = get_size("disc.width2");
    c.slope = static_cast<Real>(get_real("disc.slope"));
    return c;
}

GeneratorConfig RunConfig::generator_config(const TokenizerConfig& tok, std::size_t cond_len,
                                            std::size_t ecg_leads) const {
    GeneratorConfig c;
    c.vocab = tok.vocab();
    c.grid_t = tok.grid_t();
    c.grid_h = tok.grid_h();
    c.grid_w = tok.grid_w();
    c.dim = get_size("generator.dim");
    c.depth = get_size("generator.depth");
    c.heads = get_size("generator.heads");
    c.head_dim = get_size("generator.head_dim");
    c.ff_mult = get_size("generator.ff_mult");
    c.cond_len = cond_len;
    c.ecg_patch = get_size("generator.ecg_patch");
    c.ecg_leads = ecg_leads;
    c.ecg_trainable = get_bool("generator.ecg_trainable");
    c.critic_dim = get_size("generator.critic_dim");
    c.critic_depth = get_size("generator.critic_depth");
    c.critic_heads = get_size("generator.critic_heads");
    c.p_drop = get_real("generator.p_drop");
    c.patch_mask_rate = get_real("generator.patch_mask_rate");
    c.validate();
    return c;
}

GeneratorTrainConfig RunConfig::generator_train_config() const {
    GeneratorTrainConfig c;
    c.steps = get_size("gen_train.steps");
    c.batch = get_size("gen_train.batch");
    c.lr = static_cast<Real>(get_real("gen_train.lr"));
    c.critic_lr = static_cast<Real>(get_real("gen_train.critic_lr"));
    c.beta1 = static_cast<Real>(get_real("gen_train.beta1"));
    c.beta2 = static_cast<Real>(get_real("gen_train.beta2"));
    c.clip_norm = static_cast<Real>(get_real("gen_train.clip_norm"));
    c.warmup_steps = get_size("gen_train.warmup_steps");
    c.lr_min_frac = get_real("gen_train.lr_min_frac");
    c.ema_decay = static_cast<Real>(get_real("gen_train.ema_decay"));
    c.ema_every = get_u64("gen_train.ema_every");
    c.train_critic = get_bool("gen_train.train_critic");
    c.seed = mix_seed(seed(), 6);
    return c;
}

GenerationRequest RunConfig::generation_request() const {
    GenerationRequest r;
    r.mode = parse_mode(get_string("generate.mode"));
    r.lambda_cfg = get_real("generate.lambda_cfg");
    r.steps = get_size("generate.steps");
    r.temperature = get_real("generate.temperature");
    r.choice_temperature = get_real("generate.choice_temperature");
    r.k_overlap = get_size("generate.k_overlap");
    r.critic_remask = get_bool("generate.critic_remask");
    r.seed = mix_seed(seed(), 8);
    return r;
}

}  // namespace cardiogen
