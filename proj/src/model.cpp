#include "trajfield/model.hpp"

namespace trajfield {

using json = nlohmann::json;

namespace {

std::vector<float> to_f32(const std::vector<double>& v) { return {v.begin(), v.end()}; }

void from_f32(const CheckpointBlock* b, std::vector<double>& dst, const char* name) {
  if (!b) throw CheckpointError(CheckpointError::Kind::kMalformedHeader, std::string("checkpoint: missing block ") + name);
  if (b->values.size() != dst.size())
    throw CheckpointError(CheckpointError::Kind::kLengthMismatch,
                          std::string("checkpoint: block ") + name + " has " +
                              std::to_string(b->values.size()) + " values, expected " +
                              std::to_string(dst.size()));
  std::copy(b->values.begin(), b->values.end(), dst.begin());
}

json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 vec3_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }
json grid_json(const GridShape& g) { return {g.nx, g.ny, g.nz}; }
GridShape grid_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

}  // namespace

Checkpoint to_checkpoint(const SceneModel& m) {
  Checkpoint ck;
  json plan = json::array();
  for (const LayerSpec& l : m.renderer.plan())
    plan.push_back({{"in", l.in_channels},
                    {"out", l.out_channels},
                    {"stride", l.stride},
                    {"activation", to_string(l.activation)},
                    {"upsample", l.upsample_input},
                    {"skip", l.skip_from}});
  const PipelineConfig& p = m.pipeline;
  ck.header = {
      {"format_version", kCheckpointFormatVersion},
      {"field",
       {{"resolution", grid_json(m.field.resolution())},
        {"bounds_min", vec3_json(m.field.bounds().lo)},
        {"bounds_max", vec3_json(m.field.bounds().hi)},
        {"channels", m.field.channels()}}},
      {"occupancy",
       {{"resolution", grid_json(m.occupancy.resolution())}, {"threshold", m.occupancy.threshold()}}},
      {"pipeline",
       {{"K", p.channels},
        {"L", p.buffer_len},
        {"s", p.scale},
        {"epsilon", p.epsilon},
        {"opacity_valid", p.opacity_valid},
        {"step", p.march.step},
        {"min_transmittance", p.march.min_transmittance},
        {"max_samples", p.march.max_samples},
        {"near", p.march.near},
        {"far", p.march.far}}},
      {"camera",
       {{"fx", m.camera.fx},
        {"fy", m.camera.fy},
        {"cx", m.camera.cx},
        {"cy", m.camera.cy},
        {"w", m.camera.width},
        {"h", m.camera.height}}},
      {"renderer", {{"plan", plan}}}};
  ck.blocks.push_back({"field.raw_density", to_f32(m.field.raw_density)});
  ck.blocks.push_back({"field.features", to_f32(m.field.features)});
  ck.blocks.push_back({"renderer.params", to_f32(m.renderer.params)});
  return ck;
}

SceneModel from_checkpoint(const Checkpoint& ck) {
  SceneModel m;
  try {
    const json& h = ck.header;
    const json& f = h.at("field");
    m.field = VoxelField(grid_from(f.at("resolution")),
                         Aabb{vec3_from(f.at("bounds_min")), vec3_from(f.at("bounds_max"))},
                         f.at("channels").get<int>());
    const json& o = h.at("occupancy");
    m.occupancy = OccupancyGrid(grid_from(o.at("resolution")), o.at("threshold").get<double>());

    const json& p = h.at("pipeline");
    m.pipeline.channels = p.at("K").get<int>();
    m.pipeline.buffer_len = p.at("L").get<int>();
    m.pipeline.scale = p.at("s").get<int>();
    m.pipeline.epsilon = p.at("epsilon").get<double>();
    m.pipeline.opacity_valid = p.at("opacity_valid").get<double>();
    m.pipeline.march.step = p.at("step").get<double>();
    m.pipeline.march.min_transmittance = p.at("min_transmittance").get<double>();
    m.pipeline.march.max_samples = p.at("max_samples").get<int>();
    m.pipeline.march.near = p.at("near").get<double>();
    m.pipeline.march.far = p.at("far").get<double>();
    m.pipeline.validate();

    const json& c = h.at("camera");
    m.camera = {c.at("fx").get<double>(), c.at("fy").get<double>(), c.at("cx").get<double>(),
                c.at("cy").get<double>(), c.at("w").get<int>(),     c.at("h").get<int>()};
    m.camera.validate();

    std::vector<LayerSpec> plan;
    for (const json& l : h.at("renderer").at("plan"))
      plan.push_back({l.at("in").get<int>(), l.at("out").get<int>(), l.at("stride").get<int>(),
                      activation_from_string(l.at("activation").get<std::string>()),
                      l.at("upsample").get<bool>(), l.at("skip").get<int>()});
    m.renderer = ConvRenderer(std::move(plan));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kMalformedHeader,
                          std::string("checkpoint: bad header: ") + e.what());
  }
  if (m.field.channels() != m.pipeline.channels)
    throw CheckpointError(CheckpointError::Kind::kMalformedHeader,
                          "checkpoint: field channels disagree with K");
  from_f32(ck.find("field.raw_density"), m.field.raw_density, "field.raw_density");
  from_f32(ck.find("field.features"), m.field.features, "field.features");
  from_f32(ck.find("renderer.params"), m.renderer.params, "renderer.params");
  m.rebuild_occupancy();
  return m;
}

void save_model(const SceneModel& model, const std::filesystem::path& path) {
  save_checkpoint(to_checkpoint(model), path);
}

SceneModel load_model(const std::filesystem::path& path) { return from_checkpoint(load_checkpoint(path)); }

}  // namespace trajfield
