#pragma once

// RDT1 tensor files.
//
// Layout: the 4 magic bytes "RDT1", a u32 little-endian header length, a UTF-8
// JSON header {"dtype":"f32","shape":[n,d],"order":"row-major"}, then n*d
// little-endian IEEE-754 binary32 values in row-major order. Vectors are stored
// as 1 x m matrices.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "resid/core.hpp"

namespace resid {

struct TensorShape {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
};

/// Serialized RDT1 bytes. Values are narrowed to binary32; non-finite input
/// (or values that overflow binary32) raise ValidationError.
std::vector<std::uint8_t> encode_tensor(const Matrix& m);
Matrix decode_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const std::filesystem::path& path, const Matrix& m);
void write_tensor(const std::filesystem::path& path, const UnitTensor& t);
Matrix read_tensor(const std::filesystem::path& path);

/// Reads only the header; used to validate traces without loading payloads.
TensorShape read_tensor_shape(const std::filesystem::path& path);

void write_vector(const std::filesystem::path& path, const Vector& v);
Vector read_vector(const std::filesystem::path& path);

/// Rounds every entry through binary32, i.e. the value a write/read cycle returns.
Matrix round_to_f32(const Matrix& m);

}  // namespace resid
