#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/ecg/ecg.hpp"
#include "cardiogen/media.hpp"
#include "cardiogen/nn/layers.hpp"
#include "cardiogen/numerics/io.hpp"
#include "cardiogen/numerics/optim.hpp"

namespace cardiogen {

struct GeneratorConfig {
    std::size_t vocab = 1024;
    std::size_t grid_t = 3;
    std::size_t grid_h = 4;
    std::size_t grid_w = 4;
    std::size_t dim = 128;
    std::size_t depth = 4;
    std::size_t heads = 4;
    std::size_t head_dim = 32;
    std::size_t ff_mult = 4;
    // Longest ECG prefix, in patches over all leads.
    std::size_t cond_len = 5;
    std::size_t ecg_patch = 20;
    std::size_t ecg_leads = 1;
    bool ecg_trainable = true;
    std::size_t critic_dim = 64;
    std::size_t critic_depth = 2;
    std::size_t critic_heads = 4;
    double p_drop = 0.1;
    double patch_mask_rate = 0.25;

    std::size_t seq_len() const { return grid_t * grid_h * grid_w; }
    std::uint32_t mask_token_id() const { return static_cast<std::uint32_t>(vocab); }
    void validate() const;
};

std::map<std::string, std::string> generator_config_to_meta(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_meta(const std::map<std::string, std::string>& meta);

// cos(pi t / (2 T)).
double mask_schedule(double t, double total_steps);

struct MaskedTokens {
    std::vector<std::uint32_t> tokens;
    std::vector<std::uint8_t> mask;
    std::size_t masked = 0;
};

// ceil(ratio * n) positions drawn without replacement become mask_id.
MaskedTokens mask_tokens(std::span<const std::uint32_t> tokens, double ratio, std::uint32_t mask_id, Rng& rng);
std::size_t masked_count(double ratio, std::size_t n);

// Conditioning prefix of one sample: cond_len rows, padded rows invalid.
struct Condition {
    Tensor rows;                      // [cond_len, D]
    std::vector<std::uint8_t> valid;  // [cond_len]
    bool is_null = false;
};

class MvtmGenerator {
public:
    MvtmGenerator(const GeneratorConfig& cfg, std::uint64_t seed);

    const GeneratorConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    Condition null_condition() const;
    Condition encode_condition(const EcgPatches& patches) const;
    // Normalizes and patchifies, then embeds.
    Condition encode_ecg(const ECGSignal& ecg) const;
    const Tensor& ecg_mask_embedding() const { return ecg_mask_; }

    // Logits [B * seq_len, vocab] for video positions only.
    Tensor forward_logits(std::span<const std::vector<std::uint32_t>> tokens, std::span<const Condition> conds) const;

    // Zeroes the video-token position table (used by symmetry checks).
    void zero_positions();

private:
    GeneratorConfig cfg_;
    ParamStore params_;
    Tensor tok_emb_, pos_emb_, modality_, null_cond_, ecg_mask_;
    EcgEmbedder ecg_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm norm_;
    nn::Linear head_;
};

// Whole condition replaced by the null prefix with probability p_drop;
// otherwise each valid patch row is replaced by the learned mask embedding
// with probability patch_mask_rate.
Condition condition_dropout(const Condition& cond, const MvtmGenerator& gen, double p_drop, double patch_mask_rate,
                            Rng& rng);

// -sum_i m_i log softmax(logits_i)[target_i] / batch.
Tensor mvtm_loss(const Tensor& logits, std::span<const std::uint32_t> targets, std::span<const std::uint8_t> mask,
                 std::size_t batch);

// Small bidirectional transformer giving a per-token probability that the
// token is real.
class TokenCritic {
public:
    TokenCritic(const GeneratorConfig& cfg, std::uint64_t seed);

    // [B * seq_len] probabilities.
    Tensor forward(std::span<const std::vector<std::uint32_t>> tokens) const;
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

private:
    GeneratorConfig cfg_;
    ParamStore params_;
    Tensor tok_emb_, pos_emb_;
    std::vector<nn::TransformerBlock> blocks_;
    nn::LayerNorm norm_;
    nn::Linear out_;
};

// BCE with label 1 for real scores and 0 for fake scores.
Tensor critic_loss(const Tensor& real_scores, const Tensor& fake_scores);

struct GeneratorTrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 16;
    Real lr = Real(5e-4);
    Real critic_lr = Real(2e-4);
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.99);
    Real clip_norm = Real(1.0);
    std::size_t warmup_steps = 100;
    double lr_min_frac = 0.1;
    Real ema_decay = Real(0.995);
    std::uint64_t ema_every = 10;
    bool train_critic = true;
    std::uint64_t seed = 0;
};

struct GeneratorSample {
    std::vector<std::uint32_t> tokens;
    EcgPatches ecg;
};

struct GeneratorStepRecord {
    std::size_t step = 0;
    double mask_ratio = 0;  // batch mean
    std::size_t masked = 0;
    double mvtm = 0;
    double per_token = 0;  // mvtm * batch / masked
    double critic = 0;
    double lr = 0;
};

class GeneratorTrainer {
public:
    GeneratorTrainer(MvtmGenerator& gen, TokenCritic& critic, const GeneratorTrainConfig& cfg);

    GeneratorStepRecord step(std::span<const GeneratorSample> batch);
    std::size_t step_count() const { return step_; }
    const EmaState& ema() const { return ema_; }

    static std::string csv_header();
    static std::string csv_row(const GeneratorStepRecord& r);

private:
    MvtmGenerator& gen_;
    TokenCritic& critic_;
    GeneratorTrainConfig cfg_;
    AdamState opt_, critic_opt_;
    EmaState ema_;
    Rng rng_;
    std::size_t step_ = 0;
};

// Checkpoint with generator, critic and EMA shadow tensors.
void save_generator(const fs::path& dir, const MvtmGenerator& gen, const TokenCritic& critic, const EmaState* ema,
                    std::uint64_t seed, std::size_t step, const std::map<std::string, std::string>& extra_meta = {});
struct LoadedGenerator {
    MvtmGenerator gen;
    TokenCritic critic;
    std::size_t step = 0;
    std::uint64_t seed = 0;
    bool has_ema = false;
    std::map<std::string, std::string> meta;
};
// With use_ema the generator parameters are replaced by the EMA shadows.
LoadedGenerator load_generator(const fs::path& dir, bool use_ema);

}  // namespace cardiogen
