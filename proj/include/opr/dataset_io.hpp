#pragma once

// On-disk dataset directory:
//   occupancy.csv        one column per meter, one row per interval (0/1)
//   occupancy.meta.json  {"interval_minutes", "start_time", "num_locations", "num_intervals"}
//   locations.csv        meter_id,lat,lon (same order as the occupancy columns)
//   edges.csv            meter_id_a,meter_id_b

#include <filesystem>
#include <fstream>
#include <string>

#include "csv.hpp"
#include "error.hpp"
#include "ingest.hpp"
#include "timeutil.hpp"

#include <json.hpp>

namespace opr {

struct DatasetFiles {
  OccupancyMatrix matrix;
  SpatialGraph graph;
};

inline void write_matrix_meta(const std::string& path, const OccupancyMatrix& m) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write '" + path + "'");
  nlohmann::json j{{"interval_minutes", m.interval_minutes()},
                   {"start_time", format_timestamp(m.start_time())},
                   {"num_locations", m.num_locations()},
                   {"num_intervals", m.num_intervals()}};
  os << j.dump(2) << '\n';
}

inline void write_dataset(const std::filesystem::path& dir, const OccupancyMatrix& m, const SpatialGraph& g) {
  if (m.num_locations() != g.num_vertices()) throw DataError("write_dataset: matrix and graph sizes differ");
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "occupancy.csv");
    if (!os) throw DataError("cannot write '" + (dir / "occupancy.csv").string() + "'");
    write_matrix_csv(os, m);
  }
  write_matrix_meta((dir / "occupancy.meta.json").string(), m);
  {
    std::ofstream os(dir / "locations.csv");
    os << "meter_id,lat,lon\n";
    char buf[128];
    for (const auto& l : g.vertices()) {
      std::snprintf(buf, sizeof buf, "%s,%.9f,%.9f\n", l.meter_id.c_str(), l.lat, l.lon);
      os << buf;
    }
  }
  {
    std::ofstream os(dir / "edges.csv");
    os << "meter_id_a,meter_id_b\n";
    for (auto [a, b] : g.edges()) os << g.vertices()[a].meter_id << ',' << g.vertices()[b].meter_id << '\n';
  }
}

inline DatasetFiles read_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' not found");
  const auto meta_path = dir / "occupancy.meta.json";
  std::ifstream ms(meta_path);
  if (!ms) throw DataError("cannot open '" + meta_path.string() + "'");
  nlohmann::json meta;
  try {
    ms >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed '" + meta_path.string() + "': " + e.what());
  }
  const int interval = meta.value("interval_minutes", 5);
  const auto start = parse_timestamp(meta.value("start_time", std::string("1970-01-01T00:00")));
  if (!start) throw DataError("malformed start_time in '" + meta_path.string() + "'");

  OccupancyMatrix matrix = read_matrix_csv(csv::read_file((dir / "occupancy.csv").string()), interval, *start);
  std::vector<MeterLocation> locations =
      align_locations(matrix, parse_locations(csv::read_file((dir / "locations.csv").string())));

  const csv::Table et = csv::read_file((dir / "edges.csv").string());
  const std::size_t ca = et.require("meter_id_a"), cb = et.require("meter_id_b");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t r = 0; r < et.rows.size(); ++r) {
    auto a = matrix.index_of(et.rows[r][ca]);
    auto b = matrix.index_of(et.rows[r][cb]);
    if (!a || !b) throw DataError("edge references an unknown meter", et.lines[r]);
    if (*a == *b) throw DataError("self-edge on meter '" + et.rows[r][ca] + "'", et.lines[r]);
    edges.emplace_back(*a, *b);
  }
  return {std::move(matrix), SpatialGraph(std::move(locations), std::move(edges))};
}

}  // namespace opr
