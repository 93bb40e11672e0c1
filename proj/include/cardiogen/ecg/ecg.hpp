#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cardiogen/nn/layers.hpp"

namespace cardiogen {

namespace fs = std::filesystem;

// L leads x T samples, millivolts, row-major by lead.
struct ECGSignal {
    std::size_t leads = 0;
    std::size_t length = 0;
    int sample_rate_hz = 0;
    std::vector<std::string> lead_names;
    std::vector<float> samples;

    ECGSignal() = default;
    ECGSignal(std::size_t l, std::size_t t, int fs);
    float& at(std::size_t lead, std::size_t i) { return samples[lead * length + i]; }
    float at(std::size_t lead, std::size_t i) const { return samples[lead * length + i]; }
    void validate() const;
};

// Per-lead z-score with the std floored at 1e-6.
ECGSignal normalize(const ECGSignal& sig);

// L x n x p windows, n = ceil(T / p). The tail patch is zero-padded and
// marked invalid when p does not divide T.
struct EcgPatches {
    std::size_t leads = 0;
    std::size_t count = 0;  // n
    std::size_t width = 0;  // p
    std::vector<Real> values;          // [L * n, p]
    std::vector<std::uint8_t> valid;   // [L * n]
};
EcgPatches patchify_ecg(const ECGSignal& sig, std::size_t p);

// Patch embedder: linear p -> D plus learned position and lead embeddings.
class EcgEmbedder {
public:
    EcgEmbedder() = default;
    EcgEmbedder(ParamStore& params, const std::string& prefix, std::size_t patch, std::size_t dim,
                std::size_t max_patches, std::size_t max_leads, Rng& rng);

    // [L * n, D], rows ordered (lead, patch).
    Tensor embed(const EcgPatches& patches) const;
    std::size_t patch_width() const { return patch_; }
    std::size_t dim() const { return dim_; }
    nn::Linear& projection() { return proj_; }

private:
    std::size_t patch_ = 0, dim_ = 0, max_patches_ = 0, max_leads_ = 0;
    nn::Linear proj_;
    Tensor pos_, lead_;
};

// EPTENSR1 f32 [L, T] plus "<path>.manifest": sample_rate_hz=<int>;leads=<a,b>
void save_ecg(const fs::path& path, const ECGSignal& sig);
ECGSignal load_ecg(const fs::path& path);
// One column per lead, optional header row of lead names.
ECGSignal import_ecg_csv(const fs::path& path, int sample_rate_hz);
fs::path ecg_manifest_path(const fs::path& ecg_path);

}  // namespace cardiogen
