#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cardiogen/numerics/params.hpp"

namespace cardiogen {

namespace fs = std::filesystem;

// Portable binary tensor container:
//   "EPTENSR1" | u32 rank | rank x u64 extents | u8 dtype | little-endian payload
enum class DType : std::uint8_t { F32 = 0, F64 = 1, U16 = 2 };

struct EptTensor {
    Shape shape;
    DType dtype = DType::F32;
    std::vector<std::uint8_t> payload;

    std::size_t numel() const { return shape_numel(shape); }
    std::vector<float> as_f32() const;
    std::vector<double> as_f64() const;
    std::vector<std::uint16_t> as_u16() const;
    // Converting read of a floating payload into the library scalar type.
    std::vector<Real> as_real() const;
};

void write_ept(const fs::path& path, const Shape& shape, std::span<const float> values);
void write_ept(const fs::path& path, const Shape& shape, std::span<const double> values);
void write_ept(const fs::path& path, const Shape& shape, std::span<const std::uint16_t> values);
EptTensor read_ept(const fs::path& path);
// In-memory encoding, identical to the file bytes.
std::vector<std::uint8_t> encode_ept(const Shape& shape, DType dtype, std::span<const std::uint8_t> payload);
EptTensor decode_ept(std::span<const std::uint8_t> bytes, const std::string& origin);

// A checkpoint is a directory of named containers plus manifest.txt:
//   format=cardiogen-checkpoint-1
//   meta.<key>=<value>     (sorted by key)
//   tensor.<name>=<file>   (insertion order)
class CheckpointWriter {
public:
    explicit CheckpointWriter(fs::path dir);
    void set_meta(const std::string& key, const std::string& value);
    void add_tensor(const std::string& name, const Tensor& tensor);
    void add_tensor(const std::string& name, const Shape& shape, std::span<const Real> values);
    void add_params(const ParamStore& params, const std::string& prefix = "");
    void finish();

private:
    fs::path dir_;
    std::map<std::string, std::string> meta_;
    std::vector<std::pair<std::string, std::string>> tensors_;
};

class Checkpoint {
public:
    static Checkpoint load(const fs::path& dir);

    bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }
    const std::string& meta(const std::string& key) const;
    const std::map<std::string, std::string>& all_meta() const { return meta_; }
    bool has_tensor(const std::string& name) const;
    EptTensor tensor(const std::string& name) const;
    // Loads every entry of `params` from tensors named prefix + entry name.
    void load_params(ParamStore& params, const std::string& prefix = "") const;
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::map<std::string, std::string> meta_;
    std::map<std::string, std::string> tensors_;
};

// Whole-file helpers that surface the path in any error.
std::string read_text_file(const fs::path& path);
void write_text_file(const fs::path& path, const std::string& text);

}  // namespace cardiogen
