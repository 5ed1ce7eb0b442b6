#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gser/scheme.hpp"
#include "gser/stacks.hpp"

namespace gser {

static_assert(std::endian::native == std::endian::little,
              "container payloads are little-endian; this build targets little-endian hosts");

// Single-file volume container: one ASCII magic line carrying the header
// length, a JSON header, then a raw little-endian array payload.
//
//   GSRVOL1 <header_bytes>\n
//   <header JSON, exactly header_bytes bytes>
//   <payload>
//
// Real volumes are stored as float32, complex volumes as float32 pairs
// (real, imag). Headers serialize with sorted keys and carry no timestamps,
// so identical content produces identical bytes.
inline constexpr const char* kContainerMagic = "GSRVOL1";
inline constexpr int kContainerSchemaVersion = 1;

enum class ContainerKind { ImageStack, SlabStack, PhaseField };
enum class ContainerDtype { Real32, Complex64 };

inline std::string to_string(ContainerKind k) {
  switch (k) {
    case ContainerKind::ImageStack: return "image_stack";
    case ContainerKind::SlabStack: return "slab_stack";
    case ContainerKind::PhaseField: return "phase_field";
  }
  throw InputError("container: unknown kind");
}

inline std::string to_string(ContainerDtype t) {
  return t == ContainerDtype::Real32 ? "real32" : "complex64";
}

struct ContainerHeader {
  int schema_version = kContainerSchemaVersion;
  ContainerKind kind = ContainerKind::ImageStack;
  ContainerDtype dtype = ContainerDtype::Real32;
  GridDims dims;
  std::optional<DiffusionScheme> scheme;
  nlohmann::json provenance = nlohmann::json::object();

  // payload element count (scalars for real, complex samples for complex)
  std::int64_t payload_elements() const {
    return kind == ContainerKind::ImageStack ? dims.image_size() : dims.slab_size();
  }
  std::int64_t payload_bytes() const {
    return payload_elements() * (dtype == ContainerDtype::Real32 ? 4 : 8);
  }
  std::string axis_order() const {
    return kind == ContainerKind::ImageStack ? "dwi,z,row,col" : "slab,encoding,dwi,row,col";
  }
};

namespace detail {

inline nlohmann::json header_to_json(const ContainerHeader& h) {
  nlohmann::json j;
  j["schema_version"] = h.schema_version;
  j["kind"] = to_string(h.kind);
  j["dtype"] = to_string(h.dtype);
  j["axis_order"] = h.axis_order();
  j["dims"] = {{"n1", h.dims.n1},           {"n2", h.dims.n2}, {"ns", h.dims.ns},
               {"k_enc", h.dims.k_enc},     {"nd", h.dims.nd},
               {"voxel_size", h.dims.voxel_size}};
  if (h.scheme) {
    nlohmann::json s;
    s["bvals"] = h.scheme->bvals;
    s["bvecs"] = nlohmann::json::array();
    for (const Eigen::Vector3d& g : h.scheme->bvecs)
      s["bvecs"].push_back({g[0], g[1], g[2]});
    j["scheme"] = std::move(s);
  }
  j["provenance"] = h.provenance.is_null() ? nlohmann::json::object() : h.provenance;
  return j;
}

inline ContainerHeader header_from_json(const nlohmann::json& j, const std::string& path) {
  auto fail = [&](const std::string& what) -> IoError {
    return IoError(path + ": " + what);
  };
  ContainerHeader h;
  try {
    h.schema_version = j.at("schema_version").get<int>();
    if (h.schema_version != kContainerSchemaVersion) {
      std::ostringstream msg;
      msg << "unsupported schema version " << h.schema_version << " (expected "
          << kContainerSchemaVersion << ")";
      throw fail(msg.str());
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "image_stack") h.kind = ContainerKind::ImageStack;
    else if (kind == "slab_stack") h.kind = ContainerKind::SlabStack;
    else if (kind == "phase_field") h.kind = ContainerKind::PhaseField;
    else throw fail("unknown kind '" + kind + "'");
    const std::string dtype = j.at("dtype").get<std::string>();
    if (dtype == "real32") h.dtype = ContainerDtype::Real32;
    else if (dtype == "complex64") h.dtype = ContainerDtype::Complex64;
    else throw fail("unknown dtype '" + dtype + "'");

    const nlohmann::json& d = j.at("dims");
    h.dims.n1 = d.at("n1").get<int>();
    h.dims.n2 = d.at("n2").get<int>();
    h.dims.ns = d.at("ns").get<int>();
    h.dims.k_enc = d.at("k_enc").get<int>();
    h.dims.nd = d.at("nd").get<int>();
    const auto vs = d.at("voxel_size").get<std::vector<double>>();
    if (vs.size() != 3) throw fail("voxel_size must have three entries");
    h.dims.voxel_size = {vs[0], vs[1], vs[2]};
    h.dims.validate();

    if (j.contains("scheme")) {
      DiffusionScheme s;
      s.bvals = j.at("scheme").at("bvals").get<std::vector<double>>();
      for (const auto& g : j.at("scheme").at("bvecs")) {
        const auto v = g.get<std::vector<double>>();
        if (v.size() != 3) throw fail("scheme bvecs entries must have three components");
        s.bvecs.emplace_back(v[0], v[1], v[2]);
      }
      s.validate();
      h.scheme = std::move(s);
    }
    if (j.contains("provenance")) h.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  // dtype must agree with what the kind stores
  const bool complex_kind = h.kind == ContainerKind::SlabStack;
  if (complex_kind != (h.dtype == ContainerDtype::Complex64))
    throw fail("dtype " + to_string(h.dtype) + " does not match kind " + to_string(h.kind));
  return h;
}

inline void write_payload_real(std::ofstream& out, const Eigen::VectorXd& data) {
  std::vector<float> buf(std::size_t(data.size()));
  for (std::int64_t i = 0; i < data.size(); ++i) buf[std::size_t(i)] = float(data[i]);
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
}

inline void write_payload_complex(std::ofstream& out, const Eigen::VectorXcd& data) {
  std::vector<float> buf(std::size_t(data.size()) * 2);
  for (std::int64_t i = 0; i < data.size(); ++i) {
    buf[std::size_t(2 * i)] = float(data[i].real());
    buf[std::size_t(2 * i) + 1] = float(data[i].imag());
  }
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
}

inline void write_container_impl(const std::string& path, const ContainerHeader& h,
                                 const Eigen::VectorXd* rdata, const Eigen::VectorXcd* cdata) {
  const std::string header = header_to_json(h).dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out << kContainerMagic << ' ' << header.size() << '\n';
  out.write(header.data(), std::streamsize(header.size()));
  if (rdata) write_payload_real(out, *rdata);
  if (cdata) write_payload_complex(out, *cdata);
  out.flush();
  if (!out) throw IoError(path + ": write failed");
}

}  // namespace detail

inline void write_container(const std::string& path, const ImageStack& x,
                            const nlohmann::json& provenance = nlohmann::json::object(),
                            const DiffusionScheme* scheme = nullptr) {
  x.check("write_container");
  ContainerHeader h;
  h.kind = ContainerKind::ImageStack;
  h.dtype = ContainerDtype::Real32;
  h.dims = x.dims;
  if (scheme) h.scheme = *scheme;
  h.provenance = provenance;
  detail::write_container_impl(path, h, &x.data, nullptr);
}

inline void write_container(const std::string& path, const SlabStack& x,
                            const nlohmann::json& provenance = nlohmann::json::object(),
                            const DiffusionScheme* scheme = nullptr) {
  x.check("write_container");
  ContainerHeader h;
  h.kind = ContainerKind::SlabStack;
  h.dtype = ContainerDtype::Complex64;
  h.dims = x.dims;
  if (scheme) h.scheme = *scheme;
  h.provenance = provenance;
  detail::write_container_impl(path, h, nullptr, &x.data);
}

inline void write_container(const std::string& path, const PhaseField& x,
                            const nlohmann::json& provenance = nlohmann::json::object()) {
  x.check("write_container");
  ContainerHeader h;
  h.kind = ContainerKind::PhaseField;
  h.dtype = ContainerDtype::Real32;
  h.dims = x.dims;
  h.provenance = provenance;
  detail::write_container_impl(path, h, &x.data, nullptr);
}

// A container of any kind; exactly the member matching header.kind is set.
struct AnyVolume {
  ContainerHeader header;
  std::optional<ImageStack> image;
  std::optional<SlabStack> slab;
  std::optional<PhaseField> phase;
};

inline AnyVolume read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open");

  std::string magic_line;
  if (!std::getline(in, magic_line))
    throw IoError(path + ": truncated before the magic line (byte 0)");
  std::istringstream magic(magic_line);
  std::string tag;
  std::int64_t header_bytes = -1;
  magic >> tag >> header_bytes;
  if (tag != kContainerMagic || header_bytes < 2)
    throw IoError(path + ": bad magic line at byte 0 (expected '" +
                  std::string(kContainerMagic) + " <header_bytes>')");

  const std::int64_t header_offset = std::int64_t(magic_line.size()) + 1;
  std::string header(std::size_t(header_bytes), '\0');
  in.read(header.data(), header_bytes);
  if (in.gcount() != header_bytes) {
    std::ostringstream msg;
    msg << path << ": truncated header at byte " << (header_offset + in.gcount()) << " (expected "
        << header_bytes << " header bytes)";
    throw IoError(msg.str());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    std::ostringstream msg;
    msg << path << ": header parse error at byte " << (header_offset + std::int64_t(e.byte) - 1)
        << ": " << e.what();
    throw IoError(msg.str());
  }

  AnyVolume vol;
  vol.header = detail::header_from_json(j, path);
  const std::int64_t payload_offset = header_offset + header_bytes;
  const std::int64_t want = vol.header.payload_bytes();
  std::vector<float> buf(std::size_t(want) / 4);
  in.read(reinterpret_cast<char*>(buf.data()), want);
  if (in.gcount() != want) {
    std::ostringstream msg;
    msg << path << ": truncated payload at byte " << (payload_offset + in.gcount())
        << " (expected " << want << " payload bytes at offset " << payload_offset << ")";
    throw IoError(msg.str());
  }

  const GridDims& d = vol.header.dims;
  switch (vol.header.kind) {
    case ContainerKind::ImageStack: {
      ImageStack x(d);
      for (std::int64_t i = 0; i < x.data.size(); ++i) x.data[i] = double(buf[std::size_t(i)]);
      vol.image = std::move(x);
      break;
    }
    case ContainerKind::PhaseField: {
      PhaseField x(d);
      for (std::int64_t i = 0; i < x.data.size(); ++i) x.data[i] = double(buf[std::size_t(i)]);
      vol.phase = std::move(x);
      break;
    }
    case ContainerKind::SlabStack: {
      SlabStack x(d);
      for (std::int64_t i = 0; i < x.data.size(); ++i)
        x.data[i] = std::complex<double>(double(buf[std::size_t(2 * i)]),
                                         double(buf[std::size_t(2 * i) + 1]));
      vol.slab = std::move(x);
      break;
    }
  }
  return vol;
}

inline ImageStack read_image_container(const std::string& path, ContainerHeader* header = nullptr,
                                       DiffusionScheme* scheme = nullptr) {
  AnyVolume v = read_container(path);
  if (!v.image)
    throw IoError(path + ": expected an image_stack container, found " +
                  to_string(v.header.kind));
  if (header) *header = v.header;
  if (scheme) {
    if (!v.header.scheme) throw IoError(path + ": container carries no diffusion scheme");
    *scheme = *v.header.scheme;
  }
  return std::move(*v.image);
}

inline SlabStack read_slab_container(const std::string& path, ContainerHeader* header = nullptr,
                                     DiffusionScheme* scheme = nullptr) {
  AnyVolume v = read_container(path);
  if (!v.slab)
    throw IoError(path + ": expected a slab_stack container, found " + to_string(v.header.kind));
  if (header) *header = v.header;
  if (scheme) {
    if (!v.header.scheme) throw IoError(path + ": container carries no diffusion scheme");
    *scheme = *v.header.scheme;
  }
  return std::move(*v.slab);
}

inline PhaseField read_phase_container(const std::string& path,
                                       ContainerHeader* header = nullptr) {
  AnyVolume v = read_container(path);
  if (!v.phase)
    throw IoError(path + ": expected a phase_field container, found " + to_string(v.header.kind));
  if (header) *header = v.header;
  return std::move(*v.phase);
}

}  // namespace gser
