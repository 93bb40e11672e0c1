#include "cardiogen/ecg/ecg.hpp"

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cardiogen/numerics/io.hpp"

namespace cardiogen {

ECGSignal::ECGSignal(std::size_t l, std::size_t t, int fs)
    : leads(l), length(t), sample_rate_hz(fs), samples(l * t, 0.0f) {
    for (std::size_t i = 0; i < l; ++i) {
        lead_names.push_back(l == 1 ? "II" : "lead" + std::to_string(i));
    }
}

void ECGSignal::validate() const {
    if (leads == 0 || length == 0 || samples.size() != leads * length) {
        throw ShapeError("ECG signal " + std::to_string(leads) + "x" + std::to_string(length) + " holds " +
                         std::to_string(samples.size()) + " samples");
    }
    if (lead_names.size() != leads) {
        throw ShapeError("ECG signal has " + std::to_string(leads) + " leads but " +
                         std::to_string(lead_names.size()) + " names");
    }
    if (sample_rate_hz <= 0) {
        throw ConfigError("ECG sample rate must be positive");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples[i])) {
            throw NumericError("non-finite ECG sample at lead " + std::to_string(i / length) + ", index " +
                               std::to_string(i % length));
        }
    }
}

ECGSignal normalize(const ECGSignal& sig) {
    sig.validate();
    if (sig.length < 2) {
        throw ShapeError("normalize needs at least two samples per lead");
    }
    ECGSignal out = sig;
    for (std::size_t l = 0; l < sig.leads; ++l) {
        double mean = 0;
        for (std::size_t i = 0; i < sig.length; ++i) {
            mean += sig.at(l, i);
        }
        mean /= static_cast<double>(sig.length);
        double var = 0;
        for (std::size_t i = 0; i < sig.length; ++i) {
            const double d = sig.at(l, i) - mean;
            var += d * d;
        }
        const double sd = std::max(std::sqrt(var / static_cast<double>(sig.length)), 1e-6);
        for (std::size_t i = 0; i < sig.length; ++i) {
            out.at(l, i) = static_cast<float>((sig.at(l, i) - mean) / sd);
        }
    }
    return out;
}

EcgPatches patchify_ecg(const ECGSignal& sig, std::size_t p) {
    sig.validate();
    if (p == 0) {
        throw ConfigError("ECG patch size must be positive");
    }
    if (p > sig.length) {
        throw ConfigError("ECG patch size " + std::to_string(p) + " exceeds signal length " +
                          std::to_string(sig.length));
    }
    EcgPatches out;
    out.leads = sig.leads;
    out.count = (sig.length + p - 1) / p;
    out.width = p;
    out.values.assign(sig.leads * out.count * p, 0);
    out.valid.assign(sig.leads * out.count, 1);
    for (std::size_t l = 0; l < sig.leads; ++l) {
        for (std::size_t i = 0; i < sig.length; ++i) {
            out.values[(l * out.count + i / p) * p + i % p] = sig.at(l, i);
        }
        if (sig.length % p != 0) {
            out.valid[l * out.count + out.count - 1] = 0;
        }
    }
    return out;
}

EcgEmbedder::EcgEmbedder(ParamStore& params, const std::string& prefix, std::size_t patch, std::size_t dim,
                         std::size_t max_patches, std::size_t max_leads, Rng& rng)
    : patch_(patch), dim_(dim), max_patches_(max_patches), max_leads_(max_leads) {
    proj_ = nn::Linear(params, prefix + ".proj", patch, dim, rng);
    pos_ = params.add_normal(prefix + ".pos", {max_patches, dim}, rng, 0.02);
    lead_ = params.add_normal(prefix + ".lead", {max_leads, dim}, rng, 0.02);
}

Tensor EcgEmbedder::embed(const EcgPatches& patches) const {
    if (patches.width != patch_) {
        throw ShapeError("ECG patch width " + std::to_string(patches.width) + " does not match embedder width " +
                         std::to_string(patch_));
    }
    if (patches.count > max_patches_ || patches.leads > max_leads_) {
        throw ShapeError("ECG embedder holds " + std::to_string(max_leads_) + " leads x " +
                         std::to_string(max_patches_) + " patches, got " + std::to_string(patches.leads) + " x " +
                         std::to_string(patches.count));
    }
    const std::size_t rows = patches.leads * patches.count;
    Tensor x = proj_.forward(Tensor::from({rows, patch_}, patches.values));
    std::vector<std::uint32_t> pos_idx(rows), lead_idx(rows);
    for (std::size_t l = 0; l < patches.leads; ++l) {
        for (std::size_t i = 0; i < patches.count; ++i) {
            pos_idx[l * patches.count + i] = static_cast<std::uint32_t>(i);
            lead_idx[l * patches.count + i] = static_cast<std::uint32_t>(l);
        }
    }
    return ops::add(ops::add(x, ops::embedding(pos_, pos_idx)), ops::embedding(lead_, lead_idx));
}

fs::path ecg_manifest_path(const fs::path& ecg_path) {
    fs::path p = ecg_path;
    p.replace_extension(".manifest");
    return p;
}

void save_ecg(const fs::path& path, const ECGSignal& sig) {
    sig.validate();
    write_ept(path, {sig.leads, sig.length}, std::span<const float>(sig.samples));
    std::ostringstream os;
    os << "sample_rate_hz=" << sig.sample_rate_hz << ";leads=";
    for (std::size_t i = 0; i < sig.leads; ++i) {
        os << (i ? "," : "") << sig.lead_names[i];
    }
    os << "\n";
    write_text_file(ecg_manifest_path(path), os.str());
}

ECGSignal load_ecg(const fs::path& path) {
    auto t = read_ept(path);
    if (t.shape.size() != 2) {
        throw IoError("'" + path.string() + "' is not a rank-2 ECG tensor");
    }
    const auto man = ecg_manifest_path(path);
    if (!fs::exists(man)) {
        throw MissingArtifactError("ECG sidecar manifest not found: '" + man.string() + "'");
    }
    std::string line = read_text_file(man);
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) {
        line.pop_back();
    }
    ECGSignal sig(t.shape[0], t.shape[1], 0);
    sig.samples = t.as_f32();
    sig.lead_names.clear();
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) {
            throw IoError("malformed ECG manifest '" + man.string() + "': " + line);
        }
        const auto key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "sample_rate_hz") {
            sig.sample_rate_hz = std::stoi(value);
        } else if (key == "leads") {
            std::istringstream names(value);
            std::string n;
            while (std::getline(names, n, ',')) {
                sig.lead_names.push_back(n);
            }
        }
    }
    sig.validate();
    return sig;
}

ECGSignal import_ecg_csv(const fs::path& path, int sample_rate_hz) {
    std::istringstream is(read_text_file(path));
    std::string line;
    std::vector<std::string> names;
    std::vector<std::vector<float>> columns;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) {
            cells.push_back(cell);
        }
        if (columns.empty() && names.empty()) {
            bool numeric = true;
            for (const auto& c : cells) {
                char* end = nullptr;
                std::strtod(c.c_str(), &end);
                numeric = numeric && end != c.c_str() && *end == '\0';
            }
            if (!numeric) {
                names = cells;
                continue;
            }
        }
        if (columns.empty()) {
            columns.resize(cells.size());
        }
        if (cells.size() != columns.size()) {
            throw IoError("'" + path.string() + "' row " + std::to_string(row) + " has " +
                          std::to_string(cells.size()) + " columns, expected " + std::to_string(columns.size()));
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            try {
                columns[c].push_back(std::stof(cells[c]));
            } catch (const std::exception&) {
                throw IoError("'" + path.string() + "' row " + std::to_string(row) + ": '" + cells[c] +
                              "' is not a number");
            }
        }
    }
    if (columns.empty() || columns[0].empty()) {
        throw IoError("'" + path.string() + "' holds no samples");
    }
    ECGSignal sig(columns.size(), columns[0].size(), sample_rate_hz);
    if (!names.empty()) {
        if (names.size() != columns.size()) {
            throw IoError("'" + path.string() + "' header names " + std::to_string(names.size()) + " leads for " +
                          std::to_string(columns.size()) + " columns");
        }
        sig.lead_names = names;
    }
    for (std::size_t l = 0; l < columns.size(); ++l) {
        std::copy(columns[l].begin(), columns[l].end(), sig.samples.begin() + static_cast<std::ptrdiff_t>(l * sig.length));
    }
    sig.validate();
    return sig;
}

}  // namespace cardiogen
