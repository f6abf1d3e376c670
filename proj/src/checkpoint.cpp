#include "riskgen/checkpoint.hpp"

#include "riskgen/binio.hpp"

#include <fstream>
#include <sstream>

namespace riskgen::checkpoint {

namespace fs = std::filesystem;

void save(const fs::path& dir, json manifest,
          const std::vector<std::pair<std::string, const Matrix*>>& arrays) {
  json shapes = json::object();
  for (const auto& [name, mat] : arrays)
    shapes[name] = {mat->rows(), mat->cols()};
  manifest["arrays"] = shapes;

  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream os(tmp / "manifest.json", std::ios::binary | std::ios::trunc);
    os << manifest.dump(2) << "\n";
    if (!os) throw std::runtime_error("checkpoint: failed writing manifest to " + tmp.string());
  }
  for (const auto& [name, mat] : arrays) {
    std::ofstream os(tmp / (name + ".bin"), std::ios::binary | std::ios::trunc);
    binio::put_f32_matrix(os, *mat);
    if (!os) throw std::runtime_error("checkpoint: failed writing array " + name);
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

json load_manifest(const fs::path& dir) {
  fs::path file = dir / "manifest.json";
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: missing manifest " + file.string());
  json manifest;
  try {
    is >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint: corrupt manifest " + file.string() + ": " + e.what());
  }
  if (!manifest.contains("arrays"))
    throw std::runtime_error("checkpoint: manifest lacks arrays: " + file.string());
  return manifest;
}

Matrix load_array(const fs::path& dir, const json& manifest, const std::string& name) {
  const json& shapes = manifest.at("arrays");
  if (!shapes.contains(name))
    throw std::runtime_error("checkpoint: unknown array " + name + " in " + dir.string());
  int rows = shapes.at(name).at(0).get<int>();
  int cols = shapes.at(name).at(1).get<int>();
  std::ifstream is(dir / (name + ".bin"), std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: missing array file " + name + " in " + dir.string());
  Matrix m = binio::get_f32_matrix(is, rows, cols);
  // A trailing byte means the file does not match the recorded shape.
  char probe;
  is.read(&probe, 1);
  if (!is.eof())
    throw std::runtime_error("checkpoint: array file larger than manifest shape: " + name);
  return m;
}

}  // namespace riskgen::checkpoint
