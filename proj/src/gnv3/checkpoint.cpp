#include "gnv3/checkpoint.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "gnv3/common.hpp"
#include "gnv3/io_util.hpp"

namespace gnv3 {

namespace {

constexpr char kCheckpointMagic[4] = {'G', 'N', 'V', '3'};

std::string format_double(double v) {
  std::ostringstream oss;
  oss.precision(17);
  oss << v;
  return oss.str();
}

}  // namespace

void spec_to_ini(const ModelSpec& spec, IniFile& ini) {
  ini.set("model", "in_channels", std::to_string(spec.in_channels));
  ini.set("model", "classes", std::to_string(spec.num_classes));
  ini.set("model", "stem", std::to_string(spec.stem_channels));
  ini.set("model", "final_expand", std::to_string(spec.final_expand));
  ini.set("model", "width", format_double(spec.width));
  ini.set("model", "ratio", format_double(spec.ratio));
  ini.set("model", "rep_n", std::to_string(spec.rep_n));
  ini.set("model", "rep_1x1_dw", spec.rep_1x1_dw ? "true" : "false");
  ini.set("model", "rep_identity", spec.rep_identity ? "true" : "false");
  ini.set("model", "literal_cheap", spec.literal_cheap ? "true" : "false");
  ini.set("model", "gate_before_concat",
          spec.gate_before_concat ? "true" : "false");
  std::ostringstream st;
  for (size_t i = 0; i < spec.stages.size(); ++i) {
    const StageSpec& s = spec.stages[i];
    if (i) st << ", ";
    st << s.exp << ":" << s.out << ":" << s.k << ":" << s.stride << ":"
       << (s.attention ? 1 : 0);
  }
  ini.set("model", "stages", st.str());
}

ModelSpec spec_from_ini(const IniFile& ini) {
  ModelSpec spec;
  // A named preset seeds the fields; explicit keys below override it.
  const std::string preset = ini.get("model", "preset", "");
  const int64_t classes = ini.get_int("model", "classes", 10);
  const double width = ini.get_double("model", "width", 1.0);
  if (preset == "mini" || preset.empty()) {
    spec = mini_spec(classes, width);
  } else if (preset == "full") {
    spec = full_spec(classes, width);
  } else {
    fail(ErrorCode::bad_format, "unknown model preset: " + preset);
  }
  spec.in_channels = ini.get_int("model", "in_channels", spec.in_channels);
  spec.stem_channels = ini.get_int("model", "stem", spec.stem_channels);
  spec.final_expand = ini.get_int("model", "final_expand", spec.final_expand);
  spec.ratio = ini.get_double("model", "ratio", spec.ratio);
  spec.rep_n = static_cast<int>(ini.get_int("model", "rep_n", spec.rep_n));
  spec.rep_1x1_dw = ini.get_bool("model", "rep_1x1_dw", spec.rep_1x1_dw);
  spec.rep_identity = ini.get_bool("model", "rep_identity", spec.rep_identity);
  spec.literal_cheap = ini.get_bool("model", "literal_cheap", spec.literal_cheap);
  spec.gate_before_concat =
      ini.get_bool("model", "gate_before_concat", spec.gate_before_concat);

  if (ini.has("model", "stages")) {
    spec.stages.clear();
    std::istringstream in(ini.get("model", "stages", ""));
    std::string item;
    while (std::getline(in, item, ',')) {
      StageSpec st;
      int attn = 0;
      char c1, c2, c3, c4;
      std::istringstream f(item);
      f >> st.exp >> c1 >> st.out >> c2 >> st.k >> c3 >> st.stride >> c4 >> attn;
      GNV3_CHECK(!f.fail() && c1 == ':' && c2 == ':' && c3 == ':' && c4 == ':',
                 ErrorCode::bad_format,
                 "bad stage entry '" + item + "' (want exp:out:k:stride:attn)");
      st.attention = attn != 0;
      spec.stages.push_back(st);
    }
  }
  spec.validate();
  return spec;
}

void save_checkpoint(Model& m, const std::string& path) {
  IniFile ini;
  spec_to_ini(m.spec, ini);
  const std::string config = ini.serialize();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  GNV3_CHECK_IO(out.good(), "cannot create checkpoint: " + path);
  io::write_bytes(out, kCheckpointMagic, 4);
  io::write_le<uint32_t>(out, 1);
  io::write_le<uint8_t>(out, m.folded ? 1 : 0);
  io::write_string(out, config);
  io::write_le<uint64_t>(out, io::fnv1a64(config.data(), config.size()));

  const std::vector<TensorSlot> slots = m.slots();
  io::write_le<uint32_t>(out, static_cast<uint32_t>(slots.size()));
  for (const auto& s : slots) {
    io::write_string(out, s.name);
    io::write_le<uint8_t>(out, 0);  // dtype f32
    io::write_le<uint8_t>(out, static_cast<uint8_t>(s.dims.size()));
    for (int64_t d : s.dims) io::write_le<uint64_t>(out, d);
    io::write_f32_array(out, s.data, s.size);
  }
  out.flush();
  GNV3_CHECK_IO(out.good(), "write failed: " + path);
}

std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  GNV3_CHECK_IO(in.good(), "cannot open checkpoint: " + path);
  io::expect_magic(in, kCheckpointMagic, "checkpoint");
  const uint32_t version = io::read_le<uint32_t>(in);
  GNV3_CHECK(version == 1, ErrorCode::bad_format,
             "unsupported checkpoint version " + std::to_string(version));
  const bool folded = io::read_le<uint8_t>(in) != 0;
  const std::string config = io::read_string(in);
  const uint64_t fingerprint = io::read_le<uint64_t>(in);
  GNV3_CHECK(fingerprint == io::fnv1a64(config.data(), config.size()),
             ErrorCode::bad_format, "checkpoint fingerprint mismatch");

  const ModelSpec spec = spec_from_ini(IniFile::parse(config));
  std::unique_ptr<Model> m = build_model(spec, 0);
  if (folded) m = fold_model(*m);

  struct Entry {
    std::vector<int64_t> dims;
    Vec data;
  };
  std::unordered_map<std::string, Entry> table;
  const uint32_t count = io::read_le<uint32_t>(in);
  for (uint32_t i = 0; i < count; ++i) {
    const std::string name = io::read_string(in);
    const uint8_t dtype = io::read_le<uint8_t>(in);
    GNV3_CHECK(dtype == 0, ErrorCode::bad_format,
               "unsupported tensor dtype in checkpoint");
    const uint8_t rank = io::read_le<uint8_t>(in);
    GNV3_CHECK(rank >= 1 && rank <= 4, ErrorCode::bad_format,
               "bad tensor rank in checkpoint");
    Entry e;
    int64_t numel = 1;
    for (int r = 0; r < rank; ++r) {
      const int64_t d = io::read_le<uint64_t>(in);
      GNV3_CHECK(d >= 1 && d <= (1 << 28), ErrorCode::bad_format,
                 "bad tensor dim in checkpoint");
      e.dims.push_back(d);
      numel *= d;
    }
    e.data.resize(numel);
    io::read_f32_array(in, e.data.data(), e.data.size());
    GNV3_CHECK(table.emplace(name, std::move(e)).second, ErrorCode::bad_format,
               "duplicate tensor in checkpoint: " + name);
  }

  size_t used = 0;
  for (auto& slot : m->slots()) {
    auto it = table.find(slot.name);
    GNV3_CHECK(it != table.end(), ErrorCode::bad_format,
               "checkpoint is missing tensor: " + slot.name);
    const Entry& e = it->second;
    GNV3_CHECK(e.dims == slot.dims, ErrorCode::bad_format,
               "tensor shape mismatch for " + slot.name);
    std::copy(e.data.begin(), e.data.end(), slot.data);
    ++used;
  }
  GNV3_CHECK(used == table.size(), ErrorCode::bad_format,
             "checkpoint contains tensors the model does not expect");
  return m;
}

}  // namespace gnv3
