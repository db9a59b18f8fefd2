#include "rtaformer/weights.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "rtaformer/errors.hpp"

namespace rtaformer {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "weight archives are little-endian; big-endian hosts are not supported");

namespace {

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw ArchiveError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  throw ArchiveError("unsupported dtype '" + name + "' in archive");
}

}  // namespace

const torch::Tensor* WeightArchive::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const WeightArchive& archive) {
  json header;
  header["format"] = std::string(kWeightsFormat);
  try {
    header["manifest"] = json::parse(archive.manifest);
  } catch (const json::exception& e) {
    throw ArchiveError(std::string("manifest is not valid JSON: ") + e.what());
  }
  header["tensors"] = json::array();
  std::vector<torch::Tensor> payloads;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : archive.tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * t.element_size();
    header["tensors"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", nbytes}});
    offset += nbytes;
    payloads.push_back(std::move(t));
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ArchiveError("cannot open " + path.string() + " for writing");
  out << kWeightsFormat << '\n';
  const uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : payloads) {
    out.write(static_cast<const char*>(t.data_ptr()),
              static_cast<std::streamsize>(t.numel() * t.element_size()));
  }
  if (!out) throw ArchiveError("failed writing " + path.string());
}

WeightArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArchiveError("cannot open weight archive " + path.string());
  std::string tag;
  std::getline(in, tag);
  if (tag != kWeightsFormat) {
    throw ArchiveError(path.string() + ": expected format tag '" + std::string(kWeightsFormat) +
                       "', found '" + tag.substr(0, 40) + "'");
  }
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (uint64_t{1} << 32)) throw ArchiveError(path.string() + ": bad header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ArchiveError(path.string() + ": truncated header");

  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw ArchiveError(path.string() + ": header is not valid JSON: " + e.what());
  }
  if (header.value("format", "") != kWeightsFormat) {
    throw ArchiveError(path.string() + ": header format tag mismatch");
  }
  const auto blob_start = in.tellg();
  WeightArchive archive;
  archive.manifest = header.value("manifest", json::object()).dump();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto dtype = dtype_from(entry.at("dtype").get<std::string>());
    const auto off = entry.at("offset").get<uint64_t>();
    const auto nbytes = entry.at("nbytes").get<uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<uint64_t>(t.numel()) * t.element_size() != nbytes) {
      throw ArchiveError(path.string() + ": tensor '" + name + "' size does not match its shape");
    }
    in.seekg(blob_start + static_cast<std::streamoff>(off));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw ArchiveError(path.string() + ": truncated payload for '" + name + "'");
    archive.tensors.emplace_back(name, std::move(t));
  }
  return archive;
}

WeightArchive archive_from_module(const torch::nn::Module& module, std::string manifest) {
  WeightArchive archive;
  archive.manifest = std::move(manifest);
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    archive.tensors.emplace_back(item.key(), item.value().detach().cpu());
  }
  for (const auto& item : module.named_buffers(/*recurse=*/true)) {
    archive.tensors.emplace_back(item.key(), item.value().detach().cpu());
  }
  return archive;
}

LoadReport load_into(torch::nn::Module& module, const WeightArchive& archive,
                     const LoadOptions& options) {
  std::map<std::string, torch::Tensor> targets;
  for (const auto& item : module.named_parameters(true)) targets.emplace(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) targets.emplace(item.key(), item.value());

  LoadReport report;
  std::set<std::string> seen;
  torch::NoGradGuard no_grad;
  for (const auto& [raw_name, tensor] : archive.tensors) {
    const std::string name = options.prefix + raw_name;
    auto it = targets.find(name);
    if (it == targets.end()) {
      report.unexpected.push_back(name);
      continue;
    }
    if (it->second.sizes() != tensor.sizes()) {
      throw ArchiveError("tensor '" + name + "' has shape " + shape_string(tensor.sizes().vec()) +
                         " in archive but " + shape_string(it->second.sizes().vec()) +
                         " in module");
    }
    it->second.copy_(tensor.to(it->second.options()));
    report.loaded.push_back(name);
    seen.insert(name);
  }
  for (const auto& [name, _] : targets) {
    if (!seen.count(name)) report.missing.push_back(name);
  }
  if (options.strict && (!report.missing.empty() || !report.unexpected.empty())) {
    std::string msg = "strict load failed:";
    if (!report.missing.empty()) msg += " missing '" + report.missing.front() + "'";
    if (!report.unexpected.empty()) msg += " unexpected '" + report.unexpected.front() + "'";
    msg += " (" + std::to_string(report.missing.size()) + " missing, " +
           std::to_string(report.unexpected.size()) + " unexpected)";
    throw ArchiveError(msg);
  }
  return report;
}

}  // namespace rtaformer
