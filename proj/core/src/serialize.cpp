#include "hyperx/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hyperx/errors.hpp"

namespace hyperx {

namespace {

constexpr char kMagic[4] = {'H', 'X', 'T', '1'};

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<uint8_t>& out, double d) {
    uint64_t v = std::bit_cast<uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

double get_f64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(v);
}

}  // namespace

std::vector<uint8_t> tensor_bytes(const Tensor& t) {
    std::vector<uint8_t> out;
    const auto& shape = t.shape();
    out.reserve(8 + 4 * shape.size() + 8 * t.size());
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, static_cast<uint32_t>(shape.size()));
    for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
    for (double v : t.data()) put_f64(out, v);
    return out;
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::vector<uint8_t> bytes = tensor_bytes(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ParseError(path.string() + " is not an HXT1 tensor file");
    }
    uint32_t rank = get_u32(bytes.data() + 4);
    size_t off = 8;
    if (bytes.size() < off + 4 * rank) throw ParseError(path.string() + ": truncated header");
    std::vector<int> shape(rank);
    int64_t n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(get_u32(bytes.data() + off));
        off += 4;
        n *= shape[i];
    }
    if (bytes.size() != off + 8 * static_cast<size_t>(n)) {
        throw ParseError(path.string() + ": payload size does not match header");
    }
    std::vector<double> data(n);
    for (int64_t i = 0; i < n; ++i) {
        data[i] = get_f64(bytes.data() + off);
        off += 8;
    }
    return Tensor::from_data(std::move(shape), std::move(data));
}

uint64_t tensor_digest(const Tensor& t) {
    std::vector<uint8_t> bytes = tensor_bytes(t);
    uint64_t h = 1469598103934665603ull;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace hyperx
