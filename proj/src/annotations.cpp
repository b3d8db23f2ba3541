#include <fstream>

#include "hyperfuse/data.hpp"
#include "json.hpp"

namespace hyperfuse {

using nlohmann::json;

namespace {

std::string at_line(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

AnnotationRecord parse_record(const json& j) {
  AnnotationRecord r;
  r.image = j.at("image").get<std::string>();
  for (const json& b : j.at("boxes")) {
    GroundTruthBox g;
    g.class_id = b.at("class").get<int>();
    g.box = {b.at("x1").get<double>(), b.at("y1").get<double>(), b.at("x2").get<double>(), b.at("y2").get<double>()};
    if (!(g.box.x2 > g.box.x1) || !(g.box.y2 > g.box.y1)) throw DataError("degenerate box (x2 <= x1 or y2 <= y1)");
    if (g.class_id < 0) throw DataError("negative class id");
    r.boxes.push_back(g);
  }
  return r;
}

}  // namespace

std::vector<AnnotationRecord> read_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open annotations " + path.string());
  std::vector<AnnotationRecord> out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_record(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError(at_line(path, n) + e.what());
    } catch (const DataError& e) {
      throw DataError(at_line(path, n) + e.what());
    }
  }
  return out;
}

void write_annotations(const std::filesystem::path& path, const std::vector<AnnotationRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) {
    json boxes = json::array();
    for (const auto& g : r.boxes)
      boxes.push_back({{"class", g.class_id}, {"x1", g.box.x1}, {"y1", g.box.y1}, {"x2", g.box.x2}, {"y2", g.box.y2}});
    out << json{{"image", r.image}, {"boxes", boxes}}.dump() << "\n";
  }
}

Dataset load_dataset(const std::filesystem::path& annotations) {
  const auto records = read_annotations(annotations);
  const auto dir = annotations.parent_path();
  Dataset ds;
  std::size_t n = 0;
  std::ifstream in(annotations);
  std::string line;
  for (const auto& r : records) {
    // Line numbers of non-blank records, for error messages.
    do {
      std::getline(in, line);
      ++n;
    } while (line.find_first_not_of(" \t\r") == std::string::npos);
    AnnotatedImage img;
    try {
      img.image = read_image(dir / r.image);
    } catch (const DataError& e) {
      throw DataError(at_line(annotations, n) + e.what());
    }
    const double h = static_cast<double>(img.image.dim(1)), w = static_cast<double>(img.image.dim(2));
    for (const auto& g : r.boxes)
      if (g.box.x1 < 0 || g.box.y1 < 0 || g.box.x2 > w || g.box.y2 > h)
        throw DataError(at_line(annotations, n) + "box outside the " + std::to_string(img.image.dim(2)) + "x" +
                        std::to_string(img.image.dim(1)) + " image");
    img.gts = r.boxes;
    ds.names.push_back(r.image);
    ds.images.push_back(std::move(img));
  }
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const std::string& annotations_name, const std::string& prefix,
                  const std::vector<AnnotatedImage>& images, const std::string& extension) {
  std::vector<AnnotationRecord> records;
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.%s", i, extension.c_str());
    const std::string rel = "images/" + prefix + name;
    write_image(dir / rel, images[i].image);
    records.push_back({rel, images[i].gts});
  }
  write_annotations(dir / annotations_name, records);
}

}  // namespace hyperfuse
