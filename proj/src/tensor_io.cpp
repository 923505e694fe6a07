#include "resid/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "resid/error.hpp"

namespace resid {
namespace {

constexpr char kMagic[4] = {'R', 'D', 'T', '1'};
constexpr std::size_t kPrefix = 8;  // magic + header length

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string header_json(std::int64_t rows, std::int64_t cols) {
    nlohmann::ordered_json h;
    h["dtype"] = "f32";
    h["shape"] = {rows, cols};
    h["order"] = "row-major";
    return h.dump();
}

TensorShape parse_header(const std::uint8_t* data, std::size_t size, std::size_t& payload_offset) {
    if (size < kPrefix || std::memcmp(data, kMagic, 4) != 0) {
        throw FormatError("unrecognized format (expected RDT1 magic)");
    }
    const std::uint32_t header_len = get_u32(data + 4);
    if (size < kPrefix + header_len) throw FormatError("truncated header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(data + kPrefix, data + kPrefix + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what());
    }
    if (!h.is_object() || h.value("dtype", "") != "f32" || h.value("order", "") != "row-major") {
        throw FormatError("unsupported header: " + h.dump());
    }
    const auto& shape = h.at("shape");
    if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_integer() ||
        !shape[1].is_number_integer() || shape[0].get<std::int64_t>() < 0 ||
        shape[1].get<std::int64_t>() < 0) {
        throw FormatError("header shape must be [rows, cols]");
    }
    payload_offset = kPrefix + header_len;
    return {shape[0].get<std::int64_t>(), shape[1].get<std::int64_t>()};
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const Matrix& m) {
    const std::string header = header_json(m.rows(), m.cols());
    std::vector<std::uint8_t> out;
    out.reserve(kPrefix + header.size() + static_cast<std::size_t>(m.size()) * 4);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, static_cast<std::uint32_t>(header.size()));
    out.insert(out.end(), header.begin(), header.end());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            const auto f = static_cast<float>(v);
            if (!std::isfinite(v) || !std::isfinite(f)) {
                throw ValidationError("tensor entry (" + std::to_string(i) + "," + std::to_string(j) +
                                      ") is not a finite binary32 value");
            }
            put_u32(out, std::bit_cast<std::uint32_t>(f));
        }
    }
    return out;
}

Matrix decode_tensor(const std::vector<std::uint8_t>& bytes) {
    std::size_t offset = 0;
    const TensorShape shape = parse_header(bytes.data(), bytes.size(), offset);
    const auto count = static_cast<std::size_t>(shape.rows * shape.cols);
    if (bytes.size() - offset != count * 4) {
        throw FormatError("payload length mismatch: header declares " + std::to_string(count * 4) +
                          " bytes, found " + std::to_string(bytes.size() - offset));
    }
    Matrix m(shape.rows, shape.cols);
    const std::uint8_t* p = bytes.data() + offset;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j, p += 4) {
            const float f = std::bit_cast<float>(get_u32(p));
            if (!std::isfinite(f)) throw FormatError("non-finite value in payload");
            m(i, j) = f;
        }
    }
    return m;
}

void write_tensor(const std::filesystem::path& path, const Matrix& m) {
    const auto bytes = encode_tensor(m);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

void write_tensor(const std::filesystem::path& path, const UnitTensor& t) {
    if (t.data.rows() < 1) throw ValidationError("unit tensor needs at least one sample");
    write_tensor(path, t.data);
}

Matrix read_tensor(const std::filesystem::path& path) { return decode_tensor(slurp(path)); }

TensorShape read_tensor_shape(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::uint8_t prefix[kPrefix];
    in.read(reinterpret_cast<char*>(prefix), kPrefix);
    if (in.gcount() != static_cast<std::streamsize>(kPrefix) || std::memcmp(prefix, kMagic, 4) != 0) {
        throw FormatError("unrecognized format (expected RDT1 magic): " + path.string());
    }
    const std::uint32_t header_len = get_u32(prefix + 4);
    std::vector<std::uint8_t> buf(kPrefix + header_len);
    std::memcpy(buf.data(), prefix, kPrefix);
    in.read(reinterpret_cast<char*>(buf.data() + kPrefix), header_len);
    if (in.gcount() != static_cast<std::streamsize>(header_len)) throw FormatError("truncated header");
    std::size_t offset = 0;
    return parse_header(buf.data(), buf.size(), offset);
}

void write_vector(const std::filesystem::path& path, const Vector& v) {
    write_tensor(path, Matrix(v.transpose()));
}

Vector read_vector(const std::filesystem::path& path) {
    const Matrix m = read_tensor(path);
    if (m.rows() != 1) throw FormatError("expected a 1 x m vector tensor in " + path.string());
    return m.row(0).transpose();
}

Matrix round_to_f32(const Matrix& m) { return m.cast<float>().cast<double>(); }

}  // namespace resid
