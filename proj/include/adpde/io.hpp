#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>

#include "adpde/fields.hpp"
#include "adpde/repr.hpp"
#include "adpde/solver.hpp"

namespace adpde {

/// ADPF v1 payload kinds. Kind 3 stores a u32 frame count and an f64 dt
/// after the grid header, then the frames back to back.
enum class FieldKind : std::uint8_t { Scalar = 0, Vector = 1, Tensor = 2, Series = 3 };

using AdpfObject = std::variant<ScalarField, VectorField, TensorField, TimeSeries>;

std::string encode_adpf(const AdpfObject& obj);
/// Throws FormatError on a bad magic, version or kind, a truncated or
/// oversized payload, or a shape whose cell count overflows.
AdpfObject decode_adpf(const std::string& bytes);

void write_adpf(const std::filesystem::path& path, const AdpfObject& obj);
AdpfObject read_adpf(const std::filesystem::path& path);

ScalarField read_scalar(const std::filesystem::path& path);
VectorField read_vector(const std::filesystem::path& path);
TimeSeries read_series(const std::filesystem::path& path);

/// Directory with psi/b/lambda/a/sigma .adpf files and meta.txt.
void write_bundle(const std::filesystem::path& dir, const TransportParams& p);
TransportParams read_bundle(const std::filesystem::path& dir);

/// "key=value" lines; blank lines and '#' comments ignored.
std::map<std::string, std::string> read_kv(const std::filesystem::path& path);
void write_kv(const std::filesystem::path& path,
              const std::map<std::string, std::string>& kv);

/// 17 significant digits, enough to round-trip any double.
std::string format_double(double x);

/// 2D fields: one CSV row per index along axis 0. Other ranks: long format
/// with one index column per axis and a value column.
void write_csv(const std::filesystem::path& path, const ScalarField& f);
/// 8-bit binary PGM, min-max scaled; 3D fields export the middle slice of
/// the last axis.
void write_pgm(const std::filesystem::path& path, const ScalarField& f);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace adpde
