#include "climemu/dataio.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace climemu {

std::string VariableSpec::label() const {
  if (!level) return name;
  std::ostringstream os;
  os << name << '@' << *level;
  return os.str();
}

std::size_t ForcingSet::n_months() const {
  if (!scalars.empty()) return scalars.front().values.size();
  if (!spatials.empty()) return spatials.front().values.size();
  return 0;
}

void ForcingSet::validate(const Grid& grid, std::size_t months) const {
  for (const auto& s : scalars) {
    if (s.values.size() != months)
      throw DataError("forcing '" + s.name + "': month count mismatch");
    for (double v : s.values)
      if (!(v > 0.0))
        throw DataError("forcing '" + s.name + "': non-positive value");
  }
  for (const auto& s : spatials) {
    if (s.values.size() != months)
      throw DataError("spatial forcing '" + s.name + "': month count mismatch");
    for (const auto& m : s.values)
      if (m.size() != grid.n_cells())
        throw DataError("spatial forcing '" + s.name + "': grid mismatch");
  }
}

std::size_t ScenarioDataset::var_index(const std::string& vname,
                                       std::optional<double> level) const {
  for (std::size_t v = 0; v < variables.size(); ++v) {
    if (variables[v].name != vname) continue;
    if (!level || (variables[v].level && *variables[v].level == *level)) return v;
  }
  throw DataError("dataset '" + name + "': unknown variable " + vname);
}

Field ScenarioDataset::field(std::size_t member, std::size_t month, std::size_t var) const {
  Field f;
  f.grid = grid;
  f.variable = variables[var].name;
  f.level = variables[var].level;
  const std::size_t n = grid->n_cells();
  const auto& state = members[member][month];
  f.values.assign(state.begin() + var * n, state.begin() + (var + 1) * n);
  return f;
}

void ScenarioDataset::validate() const {
  if (!grid) throw DataError("dataset: null grid");
  grid->validate();
  const std::size_t state_size = variables.size() * grid->n_cells();
  for (const auto& member : members) {
    if (member.size() != n_months)
      throw DataError("dataset '" + name + "': member month count mismatch");
    for (const auto& state : member)
      if (state.size() != state_size)
        throw DataError("dataset '" + name + "': state size mismatch");
  }
  forcings.validate(*grid, n_months);
}

// ---------------------------------------------------------------------------
// Normalization statistics
// ---------------------------------------------------------------------------

namespace {

struct Moments {
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  void add(double x) { sum += x; sumsq += x * x; ++n; }
  double mean() const { return sum / double(n); }
  double stdev() const {  // population (1/N)
    const double m = mean();
    return std::sqrt(std::max(0.0, sumsq / double(n) - m * m));
  }
};

}  // namespace

NormStats compute_norm_stats(const std::vector<const ScenarioDataset*>& datasets) {
  if (datasets.empty()) throw DataError("compute_norm_stats: no datasets");
  const ScenarioDataset& first = *datasets.front();
  if (first.n_months == 0 && first.forcings.n_months() == 0)
    throw DataError("compute_norm_stats: no data");

  NormStats stats;
  stats.variables = first.variables;
  const std::size_t nvar = first.variables.size();
  const std::size_t ncell = first.grid->n_cells();

  std::vector<Moments> var_m(nvar);
  for (const auto* ds : datasets) {
    if (ds->variables != first.variables)
      throw DataError("compute_norm_stats: datasets disagree on variables");
    for (const auto& member : ds->members)
      for (const auto& state : member)
        for (std::size_t v = 0; v < nvar; ++v)
          for (std::size_t k = 0; k < ncell; ++k) var_m[v].add(state[v * ncell + k]);
  }
  for (std::size_t v = 0; v < nvar; ++v) {
    stats.mean.push_back(var_m[v].mean());
    const double s = var_m[v].stdev();
    if (!(s > 0.0))
      throw DegenerateVariable("compute_norm_stats: variable '" +
                               first.variables[v].label() + "' is constant");
    stats.std.push_back(s);
  }

  for (std::size_t f = 0; f < first.forcings.scalars.size(); ++f) {
    Moments m;
    for (const auto* ds : datasets)
      for (double v : ds->forcings.scalars[f].values) m.add(v);
    stats.scalar_names.push_back(first.forcings.scalars[f].name);
    stats.scalar_mean.push_back(m.mean());
    const double s = m.stdev();
    if (!(s > 0.0))
      throw DegenerateVariable("compute_norm_stats: forcing '" +
                               first.forcings.scalars[f].name + "' is constant");
    stats.scalar_std.push_back(s);
  }
  for (std::size_t f = 0; f < first.forcings.spatials.size(); ++f) {
    Moments m;
    for (const auto* ds : datasets)
      for (const auto& month : ds->forcings.spatials[f].values)
        for (double v : month) m.add(v);
    stats.spatial_names.push_back(first.forcings.spatials[f].name);
    stats.spatial_mean.push_back(m.mean());
    const double s = m.stdev();
    if (!(s > 0.0))
      throw DegenerateVariable("compute_norm_stats: spatial forcing '" +
                               first.forcings.spatials[f].name + "' is constant");
    stats.spatial_std.push_back(s);
  }
  return stats;
}

NormStats compute_norm_stats(const std::vector<ScenarioDataset>& datasets) {
  std::vector<const ScenarioDataset*> ptrs;
  for (const auto& d : datasets) ptrs.push_back(&d);
  return compute_norm_stats(ptrs);
}

// ---------------------------------------------------------------------------
// Container format
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[] = "FBCH1\n";
constexpr std::size_t kMagicLen = 6;

void write_f32(std::ofstream& out, const std::vector<double>& a) {
  std::vector<float> buf(a.begin(), a.end());
  out.write(reinterpret_cast<const char*>(buf.data()),
            std::streamsize(buf.size() * sizeof(float)));
}

void write_f64(std::ofstream& out, const std::vector<double>& a) {
  out.write(reinterpret_cast<const char*>(a.data()),
            std::streamsize(a.size() * sizeof(double)));
}

std::size_t section_count(const nlohmann::json& sec) {
  std::size_t n = 1;
  for (const auto& d : sec.at("shape")) n *= d.get<std::size_t>();
  return n;
}

}  // namespace

void write_container(const Container& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(kMagic, kMagicLen);
  const std::string header = c.header.dump();
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), std::streamsize(header.size()));
  const auto& sections = c.header.at("sections");
  if (sections.size() != c.arrays.size())
    throw DataError("write_container: section/array count mismatch");
  for (std::size_t i = 0; i < c.arrays.size(); ++i) {
    if (c.arrays[i].size() != section_count(sections[i]))
      throw DataError("write_container: array size does not match shape");
    if (sections[i].at("dtype") == "f32")
      write_f32(out, c.arrays[i]);
    else
      write_f64(out, c.arrays[i]);
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());

  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw FormatError("bad magic (expected FBCH1)", 0);

  std::uint64_t hlen = 0;
  if (!in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen)))
    throw FormatError("truncated header length", kMagicLen);

  std::string header(hlen, '\0');
  if (!in.read(header.data(), std::streamsize(hlen)))
    throw FormatError("truncated JSON header", kMagicLen + sizeof(hlen));

  Container c;
  try {
    c.header = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed JSON header: ") + e.what(),
                      kMagicLen + sizeof(hlen));
  }
  if (!c.header.contains("sections"))
    throw FormatError("header missing 'sections'", kMagicLen + sizeof(hlen));

  std::size_t offset = kMagicLen + sizeof(hlen) + hlen;
  for (const auto& sec : c.header.at("sections")) {
    const std::size_t n = section_count(sec);
    std::vector<double> a(n);
    if (sec.at("dtype") == "f32") {
      std::vector<float> buf(n);
      if (!in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(n * sizeof(float))))
        throw FormatError("truncated payload in section '" +
                              sec.at("name").get<std::string>() + "'",
                          offset);
      std::copy(buf.begin(), buf.end(), a.begin());
      offset += n * sizeof(float);
    } else if (sec.at("dtype") == "f64") {
      if (!in.read(reinterpret_cast<char*>(a.data()), std::streamsize(n * sizeof(double))))
        throw FormatError("truncated payload in section '" +
                              sec.at("name").get<std::string>() + "'",
                          offset);
      offset += n * sizeof(double);
    } else {
      throw FormatError("unknown dtype in section", offset);
    }
    c.arrays.push_back(std::move(a));
  }
  return c;
}

nlohmann::json grid_to_json(const Grid& grid) {
  return {{"lat_centers", grid.lat_centers},
          {"lon_centers", grid.lon_centers},
          {"lat_bounds", grid.lat_bounds},
          {"lon_bounds", grid.lon_bounds}};
}

GridPtr grid_from_json(const nlohmann::json& j) {
  auto g = std::make_shared<Grid>();
  j.at("lat_centers").get_to(g->lat_centers);
  j.at("lon_centers").get_to(g->lon_centers);
  j.at("lat_bounds").get_to(g->lat_bounds);
  j.at("lon_bounds").get_to(g->lon_bounds);
  g->validate();
  return g;
}

namespace {

nlohmann::json variables_to_json(const std::vector<VariableSpec>& vars) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& v : vars) {
    nlohmann::json jv{{"name", v.name}};
    if (v.level) jv["level"] = *v.level;
    out.push_back(jv);
  }
  return out;
}

std::vector<VariableSpec> variables_from_json(const nlohmann::json& j) {
  std::vector<VariableSpec> vars;
  for (const auto& jv : j) {
    VariableSpec v;
    v.name = jv.at("name").get<std::string>();
    if (jv.contains("level")) v.level = jv.at("level").get<double>();
    vars.push_back(v);
  }
  return vars;
}

}  // namespace

void write_dataset(const ScenarioDataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  const std::size_t ncell = dataset.grid->n_cells();
  const std::size_t nvar = dataset.variables.size();
  const std::size_t nmem = dataset.members.size();

  Container c;
  c.header["kind"] = "dataset";
  c.header["scenario"] = dataset.name;
  c.header["start_year"] = dataset.start_year;
  c.header["n_months"] = dataset.n_months;
  c.header["n_members"] = nmem;
  c.header["grid"] = grid_to_json(*dataset.grid);
  c.header["variables"] = variables_to_json(dataset.variables);

  nlohmann::json scalars = nlohmann::json::array();
  for (const auto& s : dataset.forcings.scalars)
    scalars.push_back({{"name", s.name}, {"values", s.values}});
  c.header["scalar_forcings"] = scalars;

  nlohmann::json sections = nlohmann::json::array();
  sections.push_back({{"name", "states"},
                      {"dtype", "f32"},
                      {"shape", {nmem, dataset.n_months, nvar,
                                 dataset.grid->n_lat(), dataset.grid->n_lon()}}});
  std::vector<double> states;
  states.reserve(nmem * dataset.n_months * nvar * ncell);
  for (const auto& member : dataset.members)
    for (const auto& state : member)
      states.insert(states.end(), state.begin(), state.end());
  c.arrays.push_back(std::move(states));

  nlohmann::json spatial_meta = nlohmann::json::array();
  for (const auto& s : dataset.forcings.spatials) {
    nlohmann::json meta{{"name", s.name}};
    if (s.level) meta["level"] = *s.level;
    spatial_meta.push_back(meta);
    sections.push_back({{"name", "forcing:" + s.name},
                        {"dtype", "f32"},
                        {"shape", {s.values.size(), dataset.grid->n_lat(),
                                   dataset.grid->n_lon()}}});
    std::vector<double> a;
    a.reserve(s.values.size() * ncell);
    for (const auto& month : s.values) a.insert(a.end(), month.begin(), month.end());
    c.arrays.push_back(std::move(a));
  }
  c.header["spatial_forcings"] = spatial_meta;
  c.header["sections"] = sections;
  write_container(c, path);
}

ScenarioDataset read_dataset(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "dataset")
    throw FormatError("container is not a dataset", 0);

  ScenarioDataset d;
  d.name = c.header.at("scenario").get<std::string>();
  d.start_year = c.header.at("start_year").get<int>();
  d.n_months = c.header.at("n_months").get<std::size_t>();
  d.grid = grid_from_json(c.header.at("grid"));
  d.variables = variables_from_json(c.header.at("variables"));

  for (const auto& s : c.header.at("scalar_forcings")) {
    ScalarForcing f;
    f.name = s.at("name").get<std::string>();
    s.at("values").get_to(f.values);
    d.forcings.scalars.push_back(std::move(f));
  }

  const std::size_t ncell = d.grid->n_cells();
  const std::size_t nvar = d.variables.size();
  const std::size_t nmem = c.header.at("n_members").get<std::size_t>();
  const auto& states = c.arrays.at(0);
  if (states.size() != nmem * d.n_months * nvar * ncell)
    throw FormatError("states section size mismatch", 0);
  d.members.resize(nmem);
  std::size_t pos = 0;
  for (std::size_t m = 0; m < nmem; ++m) {
    d.members[m].resize(d.n_months);
    for (std::size_t t = 0; t < d.n_months; ++t) {
      d.members[m][t].assign(states.begin() + std::ptrdiff_t(pos),
                             states.begin() + std::ptrdiff_t(pos + nvar * ncell));
      pos += nvar * ncell;
    }
  }

  const auto& spatial_meta = c.header.at("spatial_forcings");
  for (std::size_t i = 0; i < spatial_meta.size(); ++i) {
    SpatialForcing f;
    f.name = spatial_meta[i].at("name").get<std::string>();
    if (spatial_meta[i].contains("level")) f.level = spatial_meta[i].at("level").get<double>();
    const auto& a = c.arrays.at(1 + i);
    if (a.size() != d.n_months * ncell)
      throw FormatError("spatial forcing section size mismatch", 0);
    f.values.resize(d.n_months);
    for (std::size_t t = 0; t < d.n_months; ++t)
      f.values[t].assign(a.begin() + std::ptrdiff_t(t * ncell),
                         a.begin() + std::ptrdiff_t((t + 1) * ncell));
    d.forcings.spatials.push_back(std::move(f));
  }

  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Forcing CSV
// ---------------------------------------------------------------------------

std::vector<ScalarForcing> read_forcing_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());

  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
      // trim
      const auto b = cell.find_first_not_of(" \t\r");
      const auto e = cell.find_last_not_of(" \t\r");
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
  };

  std::string line;
  std::size_t offset = 0;
  if (!std::getline(in, line)) throw FormatError("empty forcing CSV", 0);
  const auto header = split(line);
  if (header.size() < 3 || header[0] != "year" || header[1] != "month")
    throw FormatError("forcing CSV header must start with year,month", 0);
  offset += line.size() + 1;

  std::vector<ScalarForcing> forcings(header.size() - 2);
  for (std::size_t i = 2; i < header.size(); ++i) forcings[i - 2].name = header[i];

  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      offset += line.size() + 1;
      continue;
    }
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw FormatError("forcing CSV row has wrong cell count", offset);
    for (const auto& cell : cells)
      if (cell.empty()) throw FormatError("missing cell in forcing CSV", offset);
    try {
      const int month = std::stoi(cells[1]);
      if (month < 1 || month > 12)
        throw FormatError("month outside 1-12 in forcing CSV", offset);
      for (std::size_t i = 2; i < cells.size(); ++i)
        forcings[i - 2].values.push_back(std::stod(cells[i]));
    } catch (const std::invalid_argument&) {
      throw FormatError("non-numeric cell in forcing CSV", offset);
    }
    offset += line.size() + 1;
  }
  return forcings;
}

}  // namespace climemu
