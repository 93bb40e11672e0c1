#include "cardiogen/numerics/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cardiogen {

namespace {

constexpr char kMagic[8] = {'E', 'P', 'T', 'E', 'N', 'S', 'R', '1'};

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T get_le(const std::uint8_t* p) {
    std::uint8_t bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes, bytes + sizeof(T));
    }
    T value;
    std::memcpy(&value, bytes, sizeof(T));
    return value;
}

std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::U16: return 2;
    }
    throw IoError("unknown dtype tag");
}

template <class T>
std::vector<std::uint8_t> pack(std::span<const T> values) {
    std::vector<std::uint8_t> out;
    out.reserve(values.size() * sizeof(T));
    for (auto v : values) {
        put_le(out, v);
    }
    return out;
}

template <class T>
std::vector<T> unpack(const EptTensor& t, DType expect) {
    if (t.dtype != expect) {
        throw IoError("container dtype tag " + std::to_string(static_cast<int>(t.dtype)) + " where " +
                      std::to_string(static_cast<int>(expect)) + " was expected");
    }
    std::vector<T> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = get_le<T>(t.payload.data() + i * sizeof(T));
    }
    return out;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

std::string file_name_for(const std::string& name) {
    std::string f = name;
    for (auto& c : f) {
        if (c == '/' || c == '\\' || c == ' ') {
            c = '_';
        }
    }
    return f + ".ept";
}

}  // namespace

std::vector<float> EptTensor::as_f32() const { return unpack<float>(*this, DType::F32); }
std::vector<double> EptTensor::as_f64() const { return unpack<double>(*this, DType::F64); }
std::vector<std::uint16_t> EptTensor::as_u16() const { return unpack<std::uint16_t>(*this, DType::U16); }

std::vector<Real> EptTensor::as_real() const {
    if (dtype == DType::F32) {
        auto v = as_f32();
        return std::vector<Real>(v.begin(), v.end());
    }
    if (dtype == DType::F64) {
        auto v = as_f64();
        return std::vector<Real>(v.begin(), v.end());
    }
    throw IoError("container holds integer codes, not floating values");
}

std::vector<std::uint8_t> encode_ept(const Shape& shape, DType dtype, std::span<const std::uint8_t> payload) {
    if (payload.size() != shape_numel(shape) * dtype_size(dtype)) {
        throw IoError("payload size does not match shape " + shape_str(shape));
    }
    std::vector<std::uint8_t> out(kMagic, kMagic + 8);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto e : shape) {
        put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e));
    }
    out.push_back(static_cast<std::uint8_t>(dtype));
    out.insert(out.end(), payload.begin(), payload.end());
    return out;
}

EptTensor decode_ept(std::span<const std::uint8_t> bytes, const std::string& origin) {
    auto fail = [&](const std::string& why) { return IoError("'" + origin + "': " + why); };
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw fail("missing EPTENSR1 magic");
    }
    std::size_t pos = 8;
    const auto rank = get_le<std::uint32_t>(bytes.data() + pos);
    pos += 4;
    if (rank == 0 || rank > 16 || bytes.size() < pos + rank * 8 + 1) {
        throw fail("bad rank " + std::to_string(rank));
    }
    EptTensor t;
    for (std::uint32_t i = 0; i < rank; ++i) {
        t.shape.push_back(static_cast<std::size_t>(get_le<std::uint64_t>(bytes.data() + pos)));
        pos += 8;
    }
    const std::uint8_t tag = bytes[pos++];
    if (tag > 2) {
        throw fail("unknown dtype tag " + std::to_string(tag));
    }
    t.dtype = static_cast<DType>(tag);
    const std::size_t expect = shape_numel(t.shape) * dtype_size(t.dtype);
    if (bytes.size() - pos != expect) {
        throw fail("payload is " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                   std::to_string(expect));
    }
    t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return t;
}

void write_ept(const fs::path& path, const Shape& shape, std::span<const float> values) {
    write_bytes(path, encode_ept(shape, DType::F32, pack(values)));
}

void write_ept(const fs::path& path, const Shape& shape, std::span<const double> values) {
    write_bytes(path, encode_ept(shape, DType::F64, pack(values)));
}

void write_ept(const fs::path& path, const Shape& shape, std::span<const std::uint16_t> values) {
    write_bytes(path, encode_ept(shape, DType::U16, pack(values)));
}

EptTensor read_ept(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_ept(bytes, path.string());
}

std::string read_text_file(const fs::path& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError("cannot open '" + path.string() + "' for writing");
    }
    os << text;
    if (!os) {
        throw IoError("write failed for '" + path.string() + "'");
    }
}

CheckpointWriter::CheckpointWriter(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) {
        throw IoError("cannot create checkpoint directory '" + dir_.string() + "': " + ec.message());
    }
}

void CheckpointWriter::set_meta(const std::string& key, const std::string& value) {
    if (key.find('=') != std::string::npos || value.find('\n') != std::string::npos) {
        throw IoError("checkpoint metadata must be single-line key=value");
    }
    meta_[key] = value;
}

void CheckpointWriter::add_tensor(const std::string& name, const Shape& shape, std::span<const Real> values) {
    const auto file = file_name_for(name);
    write_ept(dir_ / file, shape, values);
    tensors_.emplace_back(name, file);
}

void CheckpointWriter::add_tensor(const std::string& name, const Tensor& tensor) {
    add_tensor(name, tensor.shape(), tensor.data());
}

void CheckpointWriter::add_params(const ParamStore& params, const std::string& prefix) {
    for (const auto& e : params.entries()) {
        add_tensor(prefix + e.name, e.tensor);
    }
}

void CheckpointWriter::finish() {
    std::ostringstream os;
    os << "format=cardiogen-checkpoint-1\n";
    for (const auto& [k, v] : meta_) {
        os << "meta." << k << "=" << v << "\n";
    }
    for (const auto& [name, file] : tensors_) {
        os << "tensor." << name << "=" << file << "\n";
    }
    write_text_file(dir_ / "manifest.txt", os.str());
}

Checkpoint Checkpoint::load(const fs::path& dir) {
    const auto manifest = dir / "manifest.txt";
    if (!fs::exists(manifest)) {
        throw MissingArtifactError("checkpoint manifest not found: '" + manifest.string() + "'");
    }
    Checkpoint ck;
    ck.dir_ = dir;
    std::istringstream is(read_text_file(manifest));
    std::string line;
    bool saw_format = false;
    while (std::getline(is, line)) {
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw IoError("malformed manifest line in '" + manifest.string() + "': " + line);
        }
        const auto key = line.substr(0, eq);
        const auto value = line.substr(eq + 1);
        if (key == "format") {
            saw_format = value == "cardiogen-checkpoint-1";
        } else if (key.rfind("meta.", 0) == 0) {
            ck.meta_[key.substr(5)] = value;
        } else if (key.rfind("tensor.", 0) == 0) {
            ck.tensors_[key.substr(7)] = value;
        }
    }
    if (!saw_format) {
        throw IoError("'" + manifest.string() + "' is not a cardiogen checkpoint manifest");
    }
    return ck;
}

const std::string& Checkpoint::meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) {
        throw IoError("checkpoint '" + dir_.string() + "' lacks metadata '" + key + "'");
    }
    return it->second;
}

bool Checkpoint::has_tensor(const std::string& name) const { return tensors_.count(name) > 0; }

EptTensor Checkpoint::tensor(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
        throw IoError("checkpoint '" + dir_.string() + "' lacks tensor '" + name + "'");
    }
    return read_ept(dir_ / it->second);
}

void Checkpoint::load_params(ParamStore& params, const std::string& prefix) const {
    for (auto& e : params.entries()) {
        auto t = tensor(prefix + e.name);
        if (t.shape != e.tensor.shape()) {
            throw ShapeError("checkpoint tensor '" + prefix + e.name + "' has shape " + shape_str(t.shape) +
                             ", model expects " + shape_str(e.tensor.shape()));
        }
        auto v = t.as_real();
        std::copy(v.begin(), v.end(), e.tensor.mutable_data().begin());
    }
}

}  // namespace cardiogen
