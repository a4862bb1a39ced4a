#pragma once

// Datasets: ingestion from `.xyzf` records and OFF meshes, the native `.pcbd`
// container, and the synthetic generator with class-conditional feature laws.

#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcb/binio.hpp"
#include "pcb/core.hpp"
#include "pcb/poison_spec.hpp"

namespace pcb {

// Poison metadata carried by a poisoned dataset.
struct PoisonRecord {
  PoisonSpec spec;
  std::uint64_t seed = 0;
  std::vector<std::size_t> indices;

  bool operator==(const PoisonRecord&) const = default;
};

struct Dataset {
  int K = 0;
  int c = 0;
  // Canonical points per cloud; 0 when clouds have varying sizes.
  int n = 0;
  std::vector<LabeledCloud> clouds;
  std::optional<PoisonRecord> poison;

  std::size_t size() const { return clouds.size(); }
  bool empty() const { return clouds.empty(); }

  void validate() const {
    if (K < 1 || c < 1) throw InvalidArgument("dataset: K and c must be >= 1");
    for (const auto& lc : clouds) {
      lc.cloud.validate();
      if (static_cast<int>(lc.cloud.feature_dim()) != c) throw InvalidArgument("dataset: feature dimension mismatch");
      if (lc.label < 0 || lc.label >= K) throw InvalidArgument("dataset: label out of range");
      if (n > 0 && static_cast<int>(lc.cloud.size()) != n) throw InvalidArgument("dataset: point count mismatch");
    }
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(K), 0);
    for (const auto& lc : clouds) ++counts[static_cast<std::size_t>(lc.label)];
    return counts;
  }

  bool operator==(const Dataset& o) const = default;
};

// ---------------------------------------------------------------------------
// .xyzf: concatenated little-endian float32 records (x, y, z, f_1..f_c).

inline PointCloud decode_xyzf(const std::vector<std::uint8_t>& bytes, int c) {
  if (c < 1) throw InvalidArgument("xyzf: c must be >= 1");
  const std::size_t record = 4 * static_cast<std::size_t>(3 + c);
  if (bytes.empty()) throw FormatError("xyzf: empty file");
  if (bytes.size() % record != 0) throw FormatError("xyzf: file length is not a multiple of the record size");
  const std::size_t n = bytes.size() / record;
  binio::Reader r(bytes);
  PointCloud cloud(Positions(static_cast<Eigen::Index>(n), 3), Features(static_cast<Eigen::Index>(n), c));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (int k = 0; k < 3; ++k) cloud.positions(i, k) = r.f32();
    for (int k = 0; k < c; ++k) cloud.features(i, k) = r.f32();
  }
  if (!cloud.positions.allFinite() || !cloud.features.allFinite()) throw FormatError("xyzf: non-finite value");
  return cloud;
}

inline PointCloud load_xyzfeat_binary(const std::filesystem::path& path, int c) {
  return decode_xyzf(binio::read_file(path), c);
}

inline std::vector<std::uint8_t> encode_xyzf(const PointCloud& cloud) {
  binio::Writer w;
  for (Eigen::Index i = 0; i < cloud.positions.rows(); ++i) {
    for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(cloud.positions(i, k)));
    for (Eigen::Index k = 0; k < cloud.features.cols(); ++k) w.f32(static_cast<float>(cloud.features(i, k)));
  }
  return w.data();
}

// ---------------------------------------------------------------------------
// OFF meshes: points sampled by face area, feature = unit face normal.

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::size_t, 3>> triangles;
};

inline Mesh parse_off(std::istream& in) {
  auto next_line = [&](std::string& line) {
    while (std::getline(in, line)) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
    }
    return false;
  };
  std::string line;
  if (!next_line(line)) throw FormatError("OFF: missing header");
  std::istringstream head(line);
  std::string magic;
  head >> magic;
  if (magic.rfind("OFF", 0) != 0) throw FormatError("OFF: bad magic");
  // Counts may share the header line ("OFF 8 6 0").
  long nv = -1, nf = -1, ne = 0;
  if (!(head >> nv >> nf >> ne)) {
    if (!next_line(line)) throw FormatError("OFF: missing counts");
    std::istringstream counts(line);
    if (!(counts >> nv >> nf)) throw FormatError("OFF: bad counts");
  }
  if (nv < 3 || nf < 1) throw FormatError("OFF: need >= 3 vertices and >= 1 face");

  Mesh mesh;
  mesh.vertices.reserve(static_cast<std::size_t>(nv));
  for (long i = 0; i < nv; ++i) {
    if (!next_line(line)) throw FormatError("OFF: truncated vertex list");
    std::istringstream ls(line);
    Vec3 v;
    if (!(ls >> v.x() >> v.y() >> v.z()) || !v.allFinite()) throw FormatError("OFF: bad vertex");
    mesh.vertices.push_back(v);
  }
  for (long f = 0; f < nf; ++f) {
    if (!next_line(line)) throw FormatError("OFF: truncated face list");
    std::istringstream ls(line);
    long k = 0;
    if (!(ls >> k) || k < 3) throw FormatError("OFF: face with fewer than 3 vertices");
    std::vector<std::size_t> idx(static_cast<std::size_t>(k));
    for (auto& i : idx) {
      long v = -1;
      if (!(ls >> v) || v < 0 || v >= nv) throw FormatError("OFF: face index out of range");
      i = static_cast<std::size_t>(v);
    }
    // Fan triangulation of polygons.
    for (std::size_t t = 1; t + 1 < idx.size(); ++t) mesh.triangles.push_back({idx[0], idx[t], idx[t + 1]});
  }
  return mesh;
}

inline PointCloud sample_mesh(const Mesh& mesh, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("sample_mesh: n must be >= 1");
  std::vector<double> cumulative;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    const Vec3 e1 = mesh.vertices[t[1]] - mesh.vertices[t[0]];
    const Vec3 e2 = mesh.vertices[t[2]] - mesh.vertices[t[0]];
    total += 0.5 * e1.cross(e2).norm();
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw FormatError("OFF: mesh has no sampleable area");

  Rng rng = make_rng(seed, {0x0ff});
  PointCloud cloud(Positions(static_cast<Eigen::Index>(n), 3), Features(static_cast<Eigen::Index>(n), 3));
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double pick = uniform(rng, 0.0, total);
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& t = mesh.triangles[static_cast<std::size_t>(it - cumulative.begin())];
    const Vec3& a = mesh.vertices[t[0]];
    const Vec3& b = mesh.vertices[t[1]];
    const Vec3& c = mesh.vertices[t[2]];
    const double r1 = std::sqrt(uniform(rng, 0.0, 1.0));
    const double r2 = uniform(rng, 0.0, 1.0);
    const Vec3 p = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
    cloud.positions.row(i) = p.transpose();
    cloud.features.row(i) = (b - a).cross(c - a).normalized().transpose();
  }
  return cloud;
}

inline LabeledCloud load_off_with_normals(const std::filesystem::path& path, std::size_t n, std::uint64_t seed,
                                          int label = 0) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return LabeledCloud{sample_mesh(parse_off(in), n, seed), label, false};
}

// ---------------------------------------------------------------------------
// Synthetic data.

enum class ShapeFamily { sphere, box, cylinder, torus, plane };

inline const char* to_string(ShapeFamily s) {
  switch (s) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::box: return "box";
    case ShapeFamily::cylinder: return "cylinder";
    case ShapeFamily::torus: return "torus";
    case ShapeFamily::plane: return "plane";
  }
  return "?";
}

struct FeatureLaw {
  enum class Kind { beta, normals };
  Kind kind = Kind::beta;
  double a = 2.0;
  double b = 2.0;

  static FeatureLaw beta(double a, double b) { return {Kind::beta, a, b}; }
  static FeatureLaw normals() { return {Kind::normals, 0.0, 0.0}; }
};

struct ClassSpec {
  ShapeFamily shape = ShapeFamily::sphere;
  FeatureLaw features;
};

struct SyntheticSpec {
  std::vector<ClassSpec> classes;
  int n = 256;
  int c = 1;
  int train_per_class = 10;
  int test_per_class = 0;
  double noise = 0.01;

  int K() const { return static_cast<int>(classes.size()); }

  void validate() const {
    if (K() < 2) throw InvalidArgument("synthetic spec: K must be >= 2");
    if (train_per_class < 1) throw InvalidArgument("synthetic spec: clouds per class must be >= 1");
    if (test_per_class < 0 || n < 1 || c < 1 || noise < 0.0) throw InvalidArgument("synthetic spec: bad sizes");
    for (const auto& cl : classes)
      if (cl.features.kind == FeatureLaw::Kind::normals && c != 3)
        throw InvalidArgument("synthetic spec: normal features require c = 3");
      else if (cl.features.kind == FeatureLaw::Kind::beta && !(cl.features.a > 0 && cl.features.b > 0))
        throw InvalidArgument("synthetic spec: beta parameters must be positive");
  }
};

// Four geometric families with low-intensity, class-specific feature laws.
inline SyntheticSpec default_synthetic_spec() {
  SyntheticSpec s;
  s.classes = {
      {ShapeFamily::sphere, FeatureLaw::beta(2.0, 14.0)},
      {ShapeFamily::box, FeatureLaw::beta(4.0, 12.0)},
      {ShapeFamily::cylinder, FeatureLaw::beta(6.0, 10.0)},
      {ShapeFamily::torus, FeatureLaw::beta(3.0, 9.0)},
  };
  s.n = 256;
  s.c = 1;
  s.train_per_class = 125;
  s.test_per_class = 50;
  s.noise = 0.01;
  return s;
}

struct SyntheticData {
  Dataset train;
  Dataset test;
};

namespace detail {

inline double sample_beta(Rng& rng, double a, double b) {
  const double x = std::gamma_distribution<double>(a, 1.0)(rng);
  const double y = std::gamma_distribution<double>(b, 1.0)(rng);
  return x / (x + y);
}

// One surface sample with its outward normal.
struct SurfacePoint {
  Vec3 p;
  Vec3 normal;
};

class ShapeSampler {
 public:
  ShapeSampler(ShapeFamily family, Rng& rng) : family_(family) {
    // Per-cloud shape parameters, so instances of one class differ.
    switch (family) {
      case ShapeFamily::sphere: dims_ = {uniform(rng, 0.85, 1.15), uniform(rng, 0.85, 1.15), uniform(rng, 0.85, 1.15)}; break;
      case ShapeFamily::box: dims_ = {uniform(rng, 0.6, 1.4), uniform(rng, 0.6, 1.4), uniform(rng, 0.6, 1.4)}; break;
      case ShapeFamily::cylinder: dims_ = {uniform(rng, 0.4, 0.7), uniform(rng, 1.2, 2.0), 0.0}; break;
      case ShapeFamily::torus: dims_ = {uniform(rng, 0.8, 1.0), uniform(rng, 0.25, 0.4), 0.0}; break;
      case ShapeFamily::plane: dims_ = {uniform(rng, 0.7, 1.3), uniform(rng, 0.7, 1.3), 0.0}; break;
    }
  }

  SurfacePoint sample(Rng& rng) const {
    switch (family_) {
      case ShapeFamily::sphere: {
        Vec3 d(gauss(rng), gauss(rng), gauss(rng));
        while (d.norm() < 1e-12) d = Vec3(gauss(rng), gauss(rng), gauss(rng));
        d.normalize();
        const Vec3 p(d.x() * dims_[0], d.y() * dims_[1], d.z() * dims_[2]);
        const Vec3 nrm(d.x() / dims_[0], d.y() / dims_[1], d.z() / dims_[2]);
        return {p, nrm.normalized()};
      }
      case ShapeFamily::box: {
        const double a = dims_[0], b = dims_[1], c = dims_[2];
        const std::array<double, 3> area{b * c, a * c, a * b};
        const double pick = uniform(rng, 0.0, area[0] + area[1] + area[2]);
        const int axis = pick < area[0] ? 0 : (pick < area[0] + area[1] ? 1 : 2);
        const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        Vec3 p(uniform(rng, -a, a), uniform(rng, -b, b), uniform(rng, -c, c));
        p(axis) = sign * dims_[static_cast<std::size_t>(axis)];
        Vec3 nrm = Vec3::Zero();
        nrm(axis) = sign;
        return {p, nrm};
      }
      case ShapeFamily::cylinder: {
        const double r = dims_[0], h = dims_[1];
        const double lateral = 2.0 * std::numbers::pi * r * h;
        const double caps = 2.0 * std::numbers::pi * r * r;
        const double t = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        if (uniform(rng, 0.0, lateral + caps) < lateral) {
          const Vec3 p(r * std::cos(t), r * std::sin(t), uniform(rng, -h / 2, h / 2));
          return {p, Vec3(std::cos(t), std::sin(t), 0.0)};
        }
        const double rr = r * std::sqrt(uniform(rng, 0.0, 1.0));
        const double sign = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
        return {Vec3(rr * std::cos(t), rr * std::sin(t), sign * h / 2), Vec3(0.0, 0.0, sign)};
      }
      case ShapeFamily::torus: {
        const double R = dims_[0], r = dims_[1];
        // Rejection on the tube angle gives area-uniform samples.
        for (;;) {
          const double u = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          const double v = uniform(rng, 0.0, 2.0 * std::numbers::pi);
          if (uniform(rng, 0.0, R + r) > R + r * std::cos(v)) continue;
          const Vec3 nrm(std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v));
          const Vec3 p((R + r * std::cos(v)) * std::cos(u), (R + r * std::cos(v)) * std::sin(u), r * std::sin(v));
          return {p, nrm};
        }
      }
      case ShapeFamily::plane: {
        return {Vec3(uniform(rng, -dims_[0], dims_[0]), uniform(rng, -dims_[1], dims_[1]), 0.0), Vec3(0, 0, 1)};
      }
    }
    return {Vec3::Zero(), Vec3::UnitZ()};
  }

 private:
  static double gauss(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }
  ShapeFamily family_;
  std::array<double, 3> dims_{};
};

inline LabeledCloud synth_cloud(const SyntheticSpec& spec, int label, Rng& rng) {
  const auto& cls = spec.classes[static_cast<std::size_t>(label)];
  ShapeSampler shape(cls.shape, rng);
  PointCloud cloud(Positions(spec.n, 3), Features(spec.n, spec.c));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (Eigen::Index i = 0; i < spec.n; ++i) {
    const auto sp = shape.sample(rng);
    Vec3 p = sp.p;
    if (spec.noise > 0) p += spec.noise * Vec3(noise(rng), noise(rng), noise(rng));
    cloud.positions.row(i) = p.transpose();
    if (cls.features.kind == FeatureLaw::Kind::normals) {
      cloud.features.row(i) = sp.normal.transpose();
      apply_guard_inplace(cloud.features.row(i), GuardMode::unit());
    } else {
      for (Eigen::Index k = 0; k < spec.c; ++k) cloud.features(i, k) = sample_beta(rng, cls.features.a, cls.features.b);
      apply_guard_inplace(cloud.features.row(i), GuardMode::clip(0.0, 1.0));
    }
  }
  return LabeledCloud{center_and_scale(cloud), label, false};
}

}  // namespace detail

// Deterministic given seed. Each cloud draws from its own derived stream.
inline SyntheticData gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticData out;
  for (Dataset* d : {&out.train, &out.test}) {
    d->K = spec.K();
    d->c = spec.c;
    d->n = spec.n;
  }
  for (int split = 0; split < 2; ++split) {
    const int per_class = split == 0 ? spec.train_per_class : spec.test_per_class;
    Dataset& d = split == 0 ? out.train : out.test;
    // Interleave classes so prefixes stay balanced.
    for (int i = 0; i < per_class; ++i)
      for (int k = 0; k < spec.K(); ++k) {
        Rng rng = make_rng(seed, {static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(k),
                                  static_cast<std::uint64_t>(i)});
        d.clouds.push_back(detail::synth_cloud(spec, k, rng));
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Native .pcbd container.

inline constexpr std::string_view kDatasetMagic = "PCBD";
inline constexpr std::uint32_t kDatasetVersion = 1;

namespace detail {

inline void write_vec(binio::Writer& w, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
}
inline Vec read_vec(binio::Reader& r, std::size_t n) {
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f64();
  return v;
}

inline void write_poison(binio::Writer& w, const PoisonRecord& rec) {
  const auto& s = rec.spec;
  w.u32(static_cast<std::uint32_t>(s.trigger.dim()));
  write_vec(w, s.trigger.shift);
  write_vec(w, s.trigger.lo);
  write_vec(w, s.trigger.hi);
  w.u64(s.w);
  w.u8(static_cast<std::uint8_t>(s.selection));
  w.u64(s.selection_seed);
  w.u8(s.random_start ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(s.guard.kind));
  w.f64(s.guard.lo);
  w.f64(s.guard.hi);
  w.i32(s.target);
  w.f64(s.rate);
  w.u8(static_cast<std::uint8_t>(s.mode));
  w.u64(rec.seed);
  w.u64(rec.indices.size());
  for (auto i : rec.indices) w.u64(i);
}

inline PoisonRecord read_poison(binio::Reader& r) {
  PoisonRecord rec;
  auto& s = rec.spec;
  const std::size_t c = r.u32();
  if (c > 4096) throw FormatError("pcbd: implausible trigger dimension");
  s.trigger.shift = read_vec(r, c);
  s.trigger.lo = read_vec(r, c);
  s.trigger.hi = read_vec(r, c);
  s.w = r.u64();
  const auto sel = r.u8();
  if (sel > 1) throw FormatError("pcbd: bad selection mode");
  s.selection = static_cast<Selection>(sel);
  s.selection_seed = r.u64();
  s.random_start = r.u8() != 0;
  const auto gk = r.u8();
  if (gk > 1) throw FormatError("pcbd: bad guard mode");
  s.guard.kind = static_cast<GuardMode::Kind>(gk);
  s.guard.lo = r.f64();
  s.guard.hi = r.f64();
  s.target = r.i32();
  s.rate = r.f64();
  const auto mode = r.u8();
  if (mode > 1) throw FormatError("pcbd: bad attack mode");
  s.mode = static_cast<AttackMode>(mode);
  rec.seed = r.u64();
  const std::size_t count = r.u64();
  if (count > r.remaining() / 8) throw FormatError("pcbd: implausible poison index count");
  rec.indices.resize(count);
  for (auto& i : rec.indices) i = r.u64();
  return rec;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_dataset(const Dataset& d) {
  binio::Writer w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(d.K));
  w.u32(static_cast<std::uint32_t>(d.c));
  w.u32(static_cast<std::uint32_t>(d.n));
  w.u64(d.clouds.size());
  w.u8(d.poison ? 1 : 0);
  if (d.poison) detail::write_poison(w, *d.poison);
  for (const auto& lc : d.clouds) {
    w.i32(lc.label);
    w.u8(lc.poisoned ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(lc.cloud.size()));
    for (Eigen::Index i = 0; i < lc.cloud.positions.rows(); ++i)
      for (int k = 0; k < 3; ++k) w.f64(lc.cloud.positions(i, k));
    for (Eigen::Index i = 0; i < lc.cloud.features.rows(); ++i)
      for (Eigen::Index k = 0; k < lc.cloud.features.cols(); ++k) w.f64(lc.cloud.features(i, k));
  }
  w.seal();
  return w.data();
}

inline Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  binio::check_seal(bytes);
  binio::Reader r(bytes);
  if (r.bytes(4) != kDatasetMagic) throw FormatError("pcbd: bad magic");
  if (const auto v = r.u32(); v != kDatasetVersion)
    throw FormatError("pcbd: unsupported version " + std::to_string(v));
  Dataset d;
  d.K = static_cast<int>(r.u32());
  d.c = static_cast<int>(r.u32());
  d.n = static_cast<int>(r.u32());
  const std::size_t count = r.u64();
  const bool has_poison = r.u8() != 0;
  if (has_poison) d.poison = detail::read_poison(r);
  if (d.c < 1 || d.c > 4096) throw FormatError("pcbd: implausible feature dimension");
  if (count > r.remaining() / 9) throw FormatError("pcbd: implausible cloud count");
  d.clouds.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    LabeledCloud lc;
    lc.label = r.i32();
    lc.poisoned = r.u8() != 0;
    const std::size_t n = r.u32();
    if (n > r.remaining() / 8) throw FormatError("pcbd: implausible point count");
    lc.cloud.positions.resize(static_cast<Eigen::Index>(n), 3);
    lc.cloud.features.resize(static_cast<Eigen::Index>(n), d.c);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i)
      for (int k = 0; k < 3; ++k) lc.cloud.positions(i, k) = r.f64();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i)
      for (int k = 0; k < d.c; ++k) lc.cloud.features(i, k) = r.f64();
    d.clouds.push_back(std::move(lc));
  }
  r.verify_seal();
  return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_dataset(d));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  try {
    return decode_dataset(binio::read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace pcb
