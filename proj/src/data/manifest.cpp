#include "fedefm/data/manifest.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fedefm/common/errors.hpp"

namespace fedefm::data {

namespace fs = std::filesystem;

namespace {

void write_f32_le(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                        static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<double> read_f32_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() % 4 != 0) throw FormatError("image file " + path.string() + " is not a whole number of f32 values");
  std::vector<double> values(bytes.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = std::uint32_t(bytes[4 * i]) | (std::uint32_t(bytes[4 * i + 1]) << 8) |
                               (std::uint32_t(bytes[4 * i + 2]) << 16) | (std::uint32_t(bytes[4 * i + 3]) << 24);
    float f;
    std::memcpy(&f, &bits, 4);
    values[i] = f;
  }
  return values;
}

}  // namespace

void write_manifest_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw FormatError("cannot write manifest in " + dir.string());
  manifest << "# classes " << dataset.classes << "\n";
  manifest << "# " << dataset.provenance << "\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    const std::string rel = "images/" + std::to_string(i) + ".f32";
    std::ofstream img(dir / rel, std::ios::binary);
    for (double v : s.image.values()) write_f32_le(img, static_cast<float>(v));
    if (!img) throw FormatError("cannot write " + (dir / rel).string());
    manifest << rel << "," << s.label << "\n";
  }
}

Dataset read_manifest_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest " + manifest_path.string());
  const fs::path base = manifest_path.parent_path();
  Dataset ds;
  ds.provenance = "manifest:" + manifest_path.string();
  std::size_t declared_classes = 0, max_label = 0, line_no = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string key;
      if (hs >> key && key == "classes") hs >> declared_classes;
      continue;
    }
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": expected 'path,label'");
    const std::string rel = line.substr(0, comma);
    std::size_t label = 0;
    try {
      label = std::stoul(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) + ": bad label");
    }
    auto values = read_f32_file(base / rel);
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(values.size()))));
    if (side == 0 || side * side != values.size())
      throw FormatError("image " + rel + " is not square");
    if (ds.side == 0) ds.side = side;
    if (side != ds.side) throw FormatError("image " + rel + " has side " + std::to_string(side) + ", expected " +
                                           std::to_string(ds.side));
    ds.samples.push_back(Sample{ds.samples.size(), nn::Tensor::checked({side, side}, std::move(values)), label});
    max_label = std::max(max_label, label);
  }
  if (ds.empty()) throw FormatError("manifest " + manifest_path.string() + " lists no samples");
  ds.classes = std::max(declared_classes, max_label + 1);
  return ds;
}

}  // namespace fedefm::data
