#include "adpde/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "adpde/error.hpp"
#include "adpde/operators.hpp"

namespace adpde {
namespace fs = std::filesystem;
namespace {

static_assert(std::endian::native == std::endian::little,
              "ADPF encoding assumes a little-endian host");

constexpr char kMagic[4] = {'A', 'D', 'P', 'F'};
constexpr std::uint8_t kVersion = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_values(std::span<const double> v) {
    out_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void get_values(std::span<double> out) {
    need(out.size() * sizeof(double), "payload");
    std::memcpy(out.data(), s_.data() + pos_, out.size() * sizeof(double));
    pos_ += out.size() * sizeof(double);
  }
  std::size_t remaining() const { return s_.size() - pos_; }
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw FormatError(std::string("adpf: truncated ") + what);
    }
  }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

void put_header(Writer& w, const Grid& g, FieldKind kind) {
  w.raw(kMagic, 4);
  w.put<std::uint8_t>(kVersion);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(g.ndim()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(kind));
  for (int k = 0; k < g.ndim(); ++k) {
    if (g.shape(k) > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError("adpf: axis too long for u32 shape");
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(g.shape(k)));
  }
  for (int k = 0; k < g.ndim(); ++k) w.put<double>(g.spacing(k));
}

std::size_t checked_mul(std::size_t a, std::size_t b) {
  if (b != 0 && a > std::numeric_limits<std::size_t>::max() / b) {
    throw FormatError("adpf: shape overflow");
  }
  return a * b;
}

ScalarField read_block(Reader& r, const Grid& g) {
  std::vector<double> v(g.size());
  r.get_values(v);
  for (double x : v) {
    if (!std::isfinite(x)) throw FormatError("adpf: non-finite sample");
  }
  return ScalarField(g, std::move(v));
}

}  // namespace

std::string encode_adpf(const AdpfObject& obj) {
  Writer w;
  std::visit(
      [&](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, ScalarField>) {
          put_header(w, o.grid(), FieldKind::Scalar);
          w.put_values(o.values());
        } else if constexpr (std::is_same_v<T, VectorField>) {
          put_header(w, o.grid(), FieldKind::Vector);
          for (int c = 0; c < o.ncomp(); ++c) w.put_values(o[c].values());
        } else if constexpr (std::is_same_v<T, TensorField>) {
          put_header(w, o.grid(), FieldKind::Tensor);
          for (int e = 0; e < o.nentries(); ++e) w.put_values(o.entry(e).values());
        } else {
          put_header(w, o.grid, FieldKind::Series);
          if (o.frames.size() > std::numeric_limits<std::uint32_t>::max()) {
            throw FormatError("adpf: too many frames");
          }
          w.put<std::uint32_t>(static_cast<std::uint32_t>(o.frames.size()));
          w.put<double>(o.dt);
          for (const auto& f : o.frames) w.put_values(f.values());
        }
      },
      obj);
  return w.take();
}

AdpfObject decode_adpf(const std::string& bytes) {
  Reader r(bytes);
  r.need(4, "header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("adpf: malformed header (bad magic)");
  }
  for (int i = 0; i < 4; ++i) r.get<char>("header");
  const auto version = r.get<std::uint8_t>("header");
  if (version != kVersion) throw FormatError("adpf: malformed header (version)");
  const auto ndim = r.get<std::uint8_t>("header");
  if (ndim < 1 || ndim > 3) throw FormatError("adpf: malformed header (ndim)");
  const auto kind = r.get<std::uint8_t>("header");
  if (kind > 3) throw FormatError("adpf: malformed header (kind)");
  std::array<std::size_t, 3> shape{};
  std::array<double, 3> spacing{};
  std::size_t cells = 1;
  for (int k = 0; k < ndim; ++k) {
    shape[k] = r.get<std::uint32_t>("header");
    cells = checked_mul(cells, shape[k]);
  }
  for (int k = 0; k < ndim; ++k) spacing[k] = r.get<double>("header");
  Grid g;
  try {
    g = Grid(std::span<const std::size_t>(shape.data(), ndim),
             std::span<const double>(spacing.data(), ndim));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("adpf: malformed header (") + e.what() + ")");
  }
  auto expect_payload = [&](std::size_t blocks) {
    const std::size_t bytes_needed =
        checked_mul(checked_mul(cells, blocks), sizeof(double));
    if (r.remaining() < bytes_needed) throw FormatError("adpf: truncated payload");
    if (r.remaining() > bytes_needed) throw FormatError("adpf: trailing bytes after payload");
  };
  AdpfObject out;
  switch (static_cast<FieldKind>(kind)) {
    case FieldKind::Scalar: {
      expect_payload(1);
      out = read_block(r, g);
      break;
    }
    case FieldKind::Vector: {
      expect_payload(ndim);
      std::vector<ScalarField> comps;
      for (int c = 0; c < ndim; ++c) comps.push_back(read_block(r, g));
      out = VectorField(std::move(comps));
      break;
    }
    case FieldKind::Tensor: {
      TensorField t(g);
      expect_payload(t.nentries());
      for (int e = 0; e < t.nentries(); ++e) t.entry(e) = read_block(r, g);
      out = std::move(t);
      break;
    }
    case FieldKind::Series: {
      const auto nframes = r.get<std::uint32_t>("series header");
      const double dt = r.get<double>("series header");
      expect_payload(nframes);
      TimeSeries ts{g, dt, {}};
      for (std::uint32_t f = 0; f < nframes; ++f) ts.frames.push_back(read_block(r, g));
      out = std::move(ts);
      break;
    }
  }
  return out;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed: " + path.string());
}

void write_adpf(const fs::path& path, const AdpfObject& obj) {
  write_file(path, encode_adpf(obj));
}

AdpfObject read_adpf(const fs::path& path) { return decode_adpf(read_file(path)); }

namespace {
template <typename T>
T read_as(const fs::path& path, const char* what) {
  auto obj = read_adpf(path);
  if (auto* p = std::get_if<T>(&obj)) return std::move(*p);
  throw FormatError(path.string() + ": expected a " + what);
}
}  // namespace

ScalarField read_scalar(const fs::path& path) {
  return read_as<ScalarField>(path, "scalar field");
}
VectorField read_vector(const fs::path& path) {
  return read_as<VectorField>(path, "vector field");
}
TimeSeries read_series(const fs::path& path) {
  return read_as<TimeSeries>(path, "time series");
}

namespace {

AdpfObject pack(const std::vector<ScalarField>& comps) {
  if (comps.size() == 1) return comps.front();
  return VectorField(comps);
}

std::vector<ScalarField> unpack(const AdpfObject& obj, std::size_t expected,
                                const std::string& name) {
  std::vector<ScalarField> out;
  if (auto* s = std::get_if<ScalarField>(&obj)) {
    out.push_back(*s);
  } else if (auto* v = std::get_if<VectorField>(&obj)) {
    for (int c = 0; c < v->ncomp(); ++c) out.push_back((*v)[c]);
  } else {
    throw FormatError("bundle: " + name + " has an unexpected field kind");
  }
  if (out.size() != expected) {
    throw FormatError("bundle: " + name + " has the wrong component count");
  }
  return out;
}

std::string join_dims(const Grid& g, bool spacing) {
  std::string s;
  for (int k = 0; k < g.ndim(); ++k) {
    if (k) s += ',';
    s += spacing ? format_double(g.spacing(k)) : std::to_string(g.shape(k));
  }
  return s;
}

}  // namespace

void write_bundle(const fs::path& dir, const TransportParams& p) {
  p.validate();
  fs::create_directories(dir);
  write_adpf(dir / "psi.adpf", pack(p.potential.components));
  write_adpf(dir / "b.adpf", pack(p.spectral.b));
  write_adpf(dir / "lambda.adpf", VectorField(p.spectral.lambda));
  write_adpf(dir / "a.adpf", p.anomaly.a);
  write_adpf(dir / "sigma.adpf", p.sigma);
  const Grid& g = p.grid();
  write_kv(dir / "meta.txt", {{"ndim", std::to_string(g.ndim())},
                              {"shape", join_dims(g, false)},
                              {"spacing", join_dims(g, true)}});
}

TransportParams read_bundle(const fs::path& dir) {
  const auto meta = read_kv(dir / "meta.txt");
  const ScalarField a = read_scalar(dir / "a.adpf");
  const Grid& g = a.grid();
  if (!meta.count("ndim") || meta.at("ndim") != std::to_string(g.ndim()) ||
      !meta.count("shape") || meta.at("shape") != join_dims(g, false)) {
    throw FormatError("bundle: meta.txt does not match the stored fields");
  }
  const int d = g.ndim();
  if (d != 2 && d != 3) throw FormatError("bundle: grid must be 2D or 3D");
  TransportParams p;
  p.potential.components = unpack(read_adpf(dir / "psi.adpf"),
                                  stencil::potential_components(g), "psi");
  p.spectral.b = unpack(read_adpf(dir / "b.adpf"), d * (d - 1) / 2, "b");
  p.spectral.lambda = unpack(read_adpf(dir / "lambda.adpf"), d, "lambda");
  p.anomaly = AnomalyField::checked(a);
  p.sigma = read_scalar(dir / "sigma.adpf");
  p.validate();
  return p;
}

std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_kv(const fs::path& path, const std::map<std::string, std::string>& kv) {
  std::string s;
  for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
  write_file(path, s);
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void write_csv(const fs::path& path, const ScalarField& f) {
  const Grid& g = f.grid();
  std::string s;
  if (g.ndim() == 2) {
    const std::size_t nx = g.shape(0), ny = g.shape(1);
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < ny; ++j) {
        if (j) s += ',';
        s += format_double(f[i * ny + j]);
      }
      s += '\n';
    }
  } else {
    static const char* names[3] = {"i", "j", "k"};
    for (int k = 0; k < g.ndim(); ++k) s += std::string(names[k]) + ",";
    s += "value\n";
    for (std::size_t c = 0; c < g.size(); ++c) {
      const auto idx = g.unravel(c);
      for (int k = 0; k < g.ndim(); ++k) s += std::to_string(idx[k]) + ",";
      s += format_double(f[c]) + "\n";
    }
  }
  write_file(path, s);
}

void write_pgm(const fs::path& path, const ScalarField& f) {
  const Grid& g = f.grid();
  if (g.ndim() < 2) throw ConfigError("pgm export needs a 2D or 3D field");
  const std::size_t nx = g.shape(0), ny = g.shape(1);
  const std::size_t nz = g.ndim() == 3 ? g.shape(2) : 1;
  const std::size_t kz = nz / 2;
  std::vector<double> slice(nx * ny);
  for (std::size_t i = 0; i < nx; ++i)
    for (std::size_t j = 0; j < ny; ++j) slice[i * ny + j] = f[(i * ny + j) * nz + kz];
  const auto [lo, hi] = std::minmax_element(slice.begin(), slice.end());
  const double span = *hi - *lo;
  std::string s = "P5\n" + std::to_string(ny) + " " + std::to_string(nx) + "\n255\n";
  for (double x : slice) {
    const double t = span > 0.0 ? (x - *lo) / span : 0.0;
    s += static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * t)));
  }
  write_file(path, s);
}

}  // namespace adpde
