#include "trajfield/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>

namespace trajfield {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetError(DatasetError::Kind::kMissingFile, "missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DatasetError(DatasetError::Kind::kMalformed,
                       "malformed JSON in " + path.string() + ": " + e.what());
  }
}

Mat4 matrix_from_json(const json& j) {
  Mat4 m;
  if (j.is_array() && j.size() == 4 && j[0].is_array()) {
    for (int r = 0; r < 4; ++r) {
      if (!j[r].is_array() || j[r].size() != 4) throw std::runtime_error("matrix row must have 4 entries");
      for (int c = 0; c < 4; ++c) m(r, c) = j[r][c].get<double>();
    }
  } else if (j.is_array() && j.size() == 16) {
    for (int i = 0; i < 16; ++i) m(i / 4, i % 4) = j[i].get<double>();
  } else {
    throw std::runtime_error("expected a 4x4 matrix");
  }
  return m;
}

json matrix_to_json(const Mat4& m) {
  json rows = json::array();
  for (int r = 0; r < 4; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2), m(r, 3)});
  return rows;
}

// Camera axes flip between the x-right/y-up/z-back convention of common
// synthetic datasets and the x-right/y-down/z-forward one used here.
Mat4 flip_yz() {
  Mat4 f = Mat4::Identity();
  f(1, 1) = -1.0;
  f(2, 2) = -1.0;
  return f;
}

fs::path resolve_image(const fs::path& dir, const std::string& file) {
  fs::path p = dir / file;
  if (!fs::exists(p) && p.extension().empty()) p += ".png";
  if (!fs::exists(p)) throw DatasetError(DatasetError::Kind::kMissingFile, "missing image " + p.string());
  return p;
}

std::string size_str(int w, int h) { return std::to_string(w) + "x" + std::to_string(h); }

}  // namespace

Dataset load_posed_image_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir))
    throw DatasetError(DatasetError::Kind::kMissingFile, "not a directory: " + dir.string());
  const json meta = read_json(dir / "transforms.json");
  Dataset ds;
  try {
    if (!meta.is_object() || !meta.contains("frames") || !meta["frames"].is_array())
      throw std::runtime_error("transforms.json needs a frames list");
    const bool opengl = meta.value("camera_convention", std::string("opengl")) == "opengl";

    std::optional<CameraIntrinsics> intr;
    const bool explicit_focal = meta.contains("fl_x");
    if (explicit_focal) {
      CameraIntrinsics k;
      k.fx = meta.at("fl_x").get<double>();
      k.fy = meta.value("fl_y", k.fx);
      k.width = meta.at("w").get<int>();
      k.height = meta.at("h").get<int>();
      k.cx = meta.value("cx", k.width / 2.0);
      k.cy = meta.value("cy", k.height / 2.0);
      k.validate();
      intr = k;
    } else if (!meta.contains("camera_angle_x")) {
      throw std::runtime_error("transforms.json needs fl_x/fl_y/cx/cy/w/h or camera_angle_x");
    }
    const double fov_x = meta.value("camera_angle_x", 0.0);
    if (!intr && meta.contains("w") && meta.contains("h")) {
      intr = CameraIntrinsics::from_fov_x(fov_x, meta["w"].get<int>(), meta["h"].get<int>());
      intr->validate();
    }

    if (meta.contains("aabb")) {
      ds.bounds.lo = Vec3(meta["aabb"][0][0], meta["aabb"][0][1], meta["aabb"][0][2]);
      ds.bounds.hi = Vec3(meta["aabb"][1][0], meta["aabb"][1][1], meta["aabb"][1][2]);
    } else {
      ds.bounds = Aabb{Vec3::Constant(-1.5), Vec3::Constant(1.5)};
    }

    for (const json& fr : meta["frames"]) {
      DatasetItem item;
      const fs::path file = resolve_image(dir, fr.at("file_path").get<std::string>());
      item.image = read_png(file, &item.alpha);
      Mat4 c2w = matrix_from_json(fr.at("transform_matrix"));
      if (opengl) c2w = c2w * flip_yz();
      item.pose = Pose::from_camera_to_world(c2w);
      if (!item.pose.is_valid(1e-4))
        throw std::runtime_error("frame " + file.string() + " has a non-rigid transform");
      item.split = fr.value("split", std::string("train"));
      item.pseudo = fr.value("pseudo", false);
      if (!intr) {
        intr = CameraIntrinsics::from_fov_x(fov_x, item.image.width(), item.image.height());
        intr->validate();
      }
      if (item.image.width() != intr->width || item.image.height() != intr->height)
        throw DatasetError(DatasetError::Kind::kSizeMismatch,
                           "image " + file.string() + " is " +
                               size_str(item.image.width(), item.image.height()) +
                               " but the intrinsics say " + size_str(intr->width, intr->height));
      item.intrinsics = *intr;
      ds.items.push_back(std::move(item));
    }
    if (ds.items.empty()) throw std::runtime_error("transforms.json lists no frames");

    if (meta.contains("near") && meta.contains("far")) {
      ds.near = meta["near"].get<double>();
      ds.far = meta["far"].get<double>();
    } else {
      double dmin = std::numeric_limits<double>::infinity();
      double dmax = 0.0;
      for (const auto& it : ds.items) {
        const double d = (it.pose.center() - ds.bounds.center()).norm();
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
      const double hd = ds.bounds.half_diagonal();
      ds.near = std::max(0.05, dmin - hd);
      ds.far = dmax + hd;
    }
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(DatasetError::Kind::kMalformed,
                       (dir / "transforms.json").string() + ": " + e.what());
  }
  return ds;
}

void save_posed_image_dataset(const Dataset& ds, const fs::path& dir) {
  if (ds.empty()) throw std::invalid_argument("save_posed_image_dataset: empty dataset");
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw DatasetError(DatasetError::Kind::kIo, "cannot create " + dir.string() + ": " + ec.message());
  const CameraIntrinsics& k = ds.items.front().intrinsics;
  json meta = {{"camera_convention", "opencv"},
               {"fl_x", k.fx}, {"fl_y", k.fy}, {"cx", k.cx}, {"cy", k.cy},
               {"w", k.width}, {"h", k.height},
               {"near", ds.near}, {"far", ds.far},
               {"aabb", {{ds.bounds.lo.x(), ds.bounds.lo.y(), ds.bounds.lo.z()},
                         {ds.bounds.hi.x(), ds.bounds.hi.y(), ds.bounds.hi.z()}}},
               {"frames", json::array()}};
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const DatasetItem& it = ds.items[i];
    if (!(it.intrinsics == k))
      throw std::invalid_argument("save_posed_image_dataset: items must share intrinsics");
    char name[32];
    std::snprintf(name, sizeof name, "images/r_%04zu.png", i);
    write_png(dir / name, it.image, &it.alpha);
    json fr = {{"file_path", name}, {"transform_matrix", matrix_to_json(it.pose.camera_to_world())}};
    if (it.split != "train") fr["split"] = it.split;
    if (it.pseudo) fr["pseudo"] = true;
    meta["frames"].push_back(fr);
  }
  std::ofstream out(dir / "transforms.json");
  if (!out) throw DatasetError(DatasetError::Kind::kIo, "cannot write " + (dir / "transforms.json").string());
  out << meta.dump(2) << '\n';
}

std::vector<Pose> load_trajectory(const fs::path& path) {
  const json j = read_json(path);
  const json& list = j.is_object() ? j.value("poses", json()) : j;
  if (!list.is_array())
    throw DatasetError(DatasetError::Kind::kMalformed, path.string() + ": expected a list of poses");
  std::vector<Pose> poses;
  try {
    for (const json& m : list) {
      Pose p = Pose::from_camera_to_world(matrix_from_json(m));
      if (!p.is_valid(1e-4)) throw std::runtime_error("pose " + std::to_string(poses.size()) + " is not rigid");
      poses.push_back(p);
    }
  } catch (const std::exception& e) {
    throw DatasetError(DatasetError::Kind::kMalformed, path.string() + ": " + e.what());
  }
  return poses;
}

void save_trajectory(const std::vector<Pose>& poses, const fs::path& path) {
  json list = json::array();
  for (const Pose& p : poses) list.push_back(matrix_to_json(p.camera_to_world()));
  std::ofstream out(path);
  if (!out) throw DatasetError(DatasetError::Kind::kIo, "cannot write " + path.string());
  out << list.dump(1) << '\n';
}

}  // namespace trajfield
