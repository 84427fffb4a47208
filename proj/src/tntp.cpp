#include "odflow/tntp.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace odflow::net {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

double parse_number(const std::string& tok, long line, const std::string& what) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw parse_error("expected a number for " + what + ", got '" + tok + "'", line);
  return v;
}

int parse_int(const std::string& tok, long line, const std::string& what) {
  int v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size())
    throw parse_error("expected an integer for " + what + ", got '" + tok + "'", line);
  return v;
}

struct Metadata {
  std::map<std::string, std::string> tags;
  long end_line = 0;  // line index just past <END OF METADATA>
};

Metadata parse_metadata(const std::vector<std::string>& lines) {
  Metadata md;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '~') continue;
    if (line[0] != '<') break;
    std::size_t close = line.find('>');
    if (close == std::string::npos)
      throw parse_error("unterminated metadata tag", static_cast<long>(i + 1));
    std::string tag = line.substr(1, close - 1);
    std::string value = trim(line.substr(close + 1));
    md.tags[tag] = value;
    if (tag == "END OF METADATA") {
      md.end_line = static_cast<long>(i + 1);
      return md;
    }
  }
  throw parse_error("missing <END OF METADATA>");
}

std::vector<std::string> to_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

const std::vector<std::string> kCanonicalColumns = {
    "init_node", "term_node", "capacity", "length", "free_flow_time",
    "b",         "power",     "speed",    "toll",   "link_type"};

}  // namespace

int RoadNetwork::node_index(int node_id) const {
  auto it = std::lower_bound(nodes.begin(), nodes.end(), node_id,
                             [](const Node& n, int id) { return n.id < id; });
  if (it == nodes.end() || it->id != node_id) return -1;
  return static_cast<int>(it - nodes.begin());
}

double RoadNetwork::average_degree() const {
  if (nodes.empty()) return 0.0;
  std::set<std::pair<int, int>> pairs;
  for (const Link& l : links) pairs.insert({std::min(l.from, l.to), std::max(l.from, l.to)});
  return 2.0 * static_cast<double>(pairs.size()) / static_cast<double>(nodes.size());
}

double OdMatrix::total() const {
  double s = 0.0;
  for (const auto& [k, v] : entries) s += v;
  return s;
}

double TemporalODDemand::total() const {
  double s = 0.0;
  for (const auto& [k, v] : series)
    for (double x : v) s += x;
  return s;
}

RoadNetwork parse_tntp_net(const std::string& text) {
  auto lines = to_lines(text);
  Metadata md = parse_metadata(lines);
  auto need = [&](const char* tag) -> std::string {
    auto it = md.tags.find(tag);
    if (it == md.tags.end()) throw parse_error(std::string("missing metadata <") + tag + ">");
    return it->second;
  };
  const int declared_nodes = parse_int(need("NUMBER OF NODES"), -1, "NUMBER OF NODES");
  const int declared_links = parse_int(need("NUMBER OF LINKS"), -1, "NUMBER OF LINKS");

  std::map<std::string, int> columns;  // name -> position
  RoadNetwork network;
  for (std::size_t i = md.end_line; i < lines.size(); ++i) {
    const long line_no = static_cast<long>(i + 1);
    std::string line = trim(lines[i]);
    if (line.empty()) continue;
    if (line[0] == '~') {
      // A comment line naming init_node/term_node is the column header.
      std::string body = line.substr(1);
      auto toks = split_ws(body);
      if (std::find(toks.begin(), toks.end(), "init_node") != toks.end()) {
        columns.clear();
        int pos = 0;
        for (const auto& t : toks) {
          if (t == ";") continue;
          columns[t] = pos++;
        }
      }
      continue;
    }
    if (columns.empty())
      for (std::size_t c = 0; c < kCanonicalColumns.size(); ++c)
        columns[kCanonicalColumns[c]] = static_cast<int>(c);

    std::string row = line;
    std::replace(row.begin(), row.end(), ';', ' ');
    auto toks = split_ws(row);
    if (toks.empty()) continue;
    auto col = [&](const char* name) -> const std::string& {
      auto it = columns.find(name);
      if (it == columns.end() || it->second >= static_cast<int>(toks.size()))
        throw parse_error(std::string("row is missing column '") + name + "'", line_no);
      return toks[it->second];
    };
    Link l;
    l.id = static_cast<int>(network.links.size()) + 1;
    l.from = parse_int(col("init_node"), line_no, "init_node");
    l.to = parse_int(col("term_node"), line_no, "term_node");
    l.capacity = parse_number(col("capacity"), line_no, "capacity");
    l.length = parse_number(col("length"), line_no, "length");
    l.free_flow_time = parse_number(col("free_flow_time"), line_no, "free_flow_time");
    if (l.capacity <= 0.0)
      throw validation_error("link " + std::to_string(l.id) + " (" + std::to_string(l.from) +
                             "->" + std::to_string(l.to) + ") has non-positive capacity");
    if (l.free_flow_time <= 0.0)
      throw validation_error("link " + std::to_string(l.id) + " (" + std::to_string(l.from) +
                             "->" + std::to_string(l.to) + ") has non-positive free-flow time");
    network.links.push_back(l);
  }

  if (static_cast<int>(network.links.size()) != declared_links)
    throw integrity_error("declared " + std::to_string(declared_links) + " links but parsed " +
                          std::to_string(network.links.size()));

  std::set<int> ids;
  for (const Link& l : network.links) {
    ids.insert(l.from);
    ids.insert(l.to);
  }
  if (static_cast<int>(ids.size()) != declared_nodes)
    throw integrity_error("declared " + std::to_string(declared_nodes) + " nodes but links reference " +
                          std::to_string(ids.size()));
  for (int id : ids) network.nodes.push_back(Node{id, 0.0, 0.0});
  return network;
}

std::vector<Node> parse_tntp_nodes(const std::string& text) {
  auto lines = to_lines(text);
  std::vector<Node> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const long line_no = static_cast<long>(i + 1);
    std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '~' || line[0] == '<') continue;
    std::string row = line;
    std::replace(row.begin(), row.end(), ';', ' ');
    auto toks = split_ws(row);
    if (toks.empty()) continue;
    // Skip a textual header such as "node x y".
    if (!toks[0].empty() && !std::isdigit(static_cast<unsigned char>(toks[0][0])) &&
        toks[0][0] != '-')
      continue;
    if (toks.size() < 3) throw parse_error("node row needs id, x, y", line_no);
    Node n;
    n.id = parse_int(toks[0], line_no, "node id");
    n.x = parse_number(toks[1], line_no, "x");
    n.y = parse_number(toks[2], line_no, "y");
    out.push_back(n);
  }
  std::sort(out.begin(), out.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
  return out;
}

void attach_coordinates(RoadNetwork& network, const std::vector<Node>& coords) {
  for (const Node& c : coords) {
    int idx = network.node_index(c.id);
    if (idx < 0)
      throw validation_error("node file references unknown node " + std::to_string(c.id));
    network.nodes[idx].x = c.x;
    network.nodes[idx].y = c.y;
  }
}

OdMatrix parse_tntp_trips(const std::string& text) {
  auto lines = to_lines(text);
  Metadata md = parse_metadata(lines);
  OdMatrix m;
  if (auto it = md.tags.find("NUMBER OF ZONES"); it != md.tags.end())
    m.zones = parse_int(it->second, -1, "NUMBER OF ZONES");
  auto it = md.tags.find("TOTAL OD FLOW");
  if (it == md.tags.end()) throw parse_error("missing metadata <TOTAL OD FLOW>");
  m.declared_total = parse_number(it->second, -1, "TOTAL OD FLOW");

  // Token scan over the body; ':' and ';' separate destination/flow entries.
  std::vector<std::pair<std::string, long>> toks;
  for (std::size_t i = md.end_line; i < lines.size(); ++i) {
    std::string line = trim(lines[i]);
    if (line.empty() || line[0] == '~') continue;
    std::string cur;
    for (char c : line) {
      if (c == ':' || c == ';') {
        if (!cur.empty()) toks.push_back({cur, static_cast<long>(i + 1)});
        cur.clear();
        toks.push_back({std::string(1, c), static_cast<long>(i + 1)});
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        if (!cur.empty()) toks.push_back({cur, static_cast<long>(i + 1)});
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!cur.empty()) toks.push_back({cur, static_cast<long>(i + 1)});
  }

  int origin = -1;
  double sum = 0.0;
  std::size_t i = 0;
  auto check_zone = [&](int id, long line) {
    if (m.zones > 0 && (id < 1 || id > m.zones))
      throw validation_error("zone " + std::to_string(id) + " outside declared range (line " +
                             std::to_string(line) + ")");
  };
  while (i < toks.size()) {
    if (toks[i].first == "Origin") {
      if (i + 1 >= toks.size()) throw parse_error("Origin without id", toks[i].second);
      origin = parse_int(toks[i + 1].first, toks[i + 1].second, "origin id");
      check_zone(origin, toks[i + 1].second);
      i += 2;
      continue;
    }
    if (origin < 0) throw parse_error("trip entry before any Origin block", toks[i].second);
    if (i + 3 >= toks.size() || toks[i + 1].first != ":")
      throw parse_error("expected 'destination : flow ;'", toks[i].second);
    int dest = parse_int(toks[i].first, toks[i].second, "destination id");
    check_zone(dest, toks[i].second);
    double flow = parse_number(toks[i + 2].first, toks[i + 2].second, "flow");
    if (toks[i + 3].first != ";")
      throw parse_error("trip entry not terminated by ';'", toks[i + 3].second);
    if (flow < 0.0)
      throw validation_error("negative demand " + format_double(flow) + " for pair " +
                             std::to_string(origin) + "->" + std::to_string(dest));
    if (flow > 0.0) {
      m.entries[{origin, dest}] += flow;
      sum += flow;
    }
    i += 4;
  }

  const double tol = 1e-6 * std::max(1.0, std::abs(m.declared_total));
  if (std::abs(sum - m.declared_total) > tol)
    throw integrity_error("trips sum " + format_double(sum) + " does not match declared total " +
                          format_double(m.declared_total));
  return m;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string serialize_tntp_net(const RoadNetwork& network) {
  std::string out;
  out += "<NUMBER OF NODES> " + std::to_string(network.nodes.size()) + "\n";
  out += "<NUMBER OF LINKS> " + std::to_string(network.links.size()) + "\n";
  out += "<FIRST THRU NODE> 1\n";
  out += "<END OF METADATA>\n\n";
  out += "~ init_node term_node capacity length free_flow_time ;\n";
  for (const Link& l : network.links) {
    out += std::to_string(l.from) + " " + std::to_string(l.to) + " " + format_double(l.capacity) +
           " " + format_double(l.length) + " " + format_double(l.free_flow_time) + " ;\n";
  }
  return out;
}

std::string serialize_tntp_nodes(const RoadNetwork& network) {
  std::string out = "node x y ;\n";
  for (const Node& n : network.nodes)
    out += std::to_string(n.id) + " " + format_double(n.x) + " " + format_double(n.y) + " ;\n";
  return out;
}

std::string serialize_tntp_trips(const OdMatrix& matrix) {
  std::string out;
  out += "<NUMBER OF ZONES> " + std::to_string(matrix.zones) + "\n";
  out += "<TOTAL OD FLOW> " + format_double(matrix.total()) + "\n";
  out += "<END OF METADATA>\n\n";
  int current_origin = -1;
  for (const auto& [pair, flow] : matrix.entries) {
    if (pair.first != current_origin) {
      current_origin = pair.first;
      out += "Origin " + std::to_string(current_origin) + "\n";
    }
    out += "    " + std::to_string(pair.second) + " : " + format_double(flow) + " ;\n";
  }
  return out;
}

TemporalODDemand expand_demand(const OdMatrix& matrix, const std::vector<double>& profile,
                               int interval_minutes) {
  if (profile.empty()) throw validation_error("departure profile must have at least one step");
  if (interval_minutes <= 0) throw validation_error("interval_minutes must be positive");
  double sum = 0.0;
  for (double w : profile) {
    if (w < 0.0) throw validation_error("departure profile has a negative weight");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw validation_error("departure profile sums to " + format_double(sum) + ", expected 1");

  TemporalODDemand d;
  d.horizon_steps = static_cast<int>(profile.size());
  d.interval_minutes = interval_minutes;
  for (const auto& [pair, flow] : matrix.entries) {
    if (pair.first == pair.second)
      throw validation_error("intrazonal demand " + std::to_string(pair.first) + "->" +
                             std::to_string(pair.second) + " is not supported");
    std::vector<double> series(profile.size());
    for (std::size_t t = 0; t < profile.size(); ++t) series[t] = flow * profile[t];
    d.series[pair] = std::move(series);
  }
  return d;
}

std::vector<double> demand_profile(const std::string& name, int steps) {
  if (steps < 1) throw validation_error("profile needs at least one step");
  std::vector<double> p(steps);
  if (name == "uniform") {
    std::fill(p.begin(), p.end(), 1.0 / steps);
  } else if (name == "peak") {
    // Triangular profile peaking mid-horizon.
    double sum = 0.0;
    for (int t = 0; t < steps; ++t) {
      double x = (t + 0.5) / steps;
      p[t] = 1.0 - std::abs(2.0 * x - 1.0) + 0.1;
      sum += p[t];
    }
    for (double& w : p) w /= sum;
  } else {
    throw validation_error("unknown demand profile '" + name + "' (use uniform or peak)");
  }
  return p;
}

NetworkSummary summarize(const RoadNetwork& network, const OdMatrix* trips) {
  NetworkSummary s;
  s.node_count = network.num_nodes();
  s.link_count = network.num_links();
  s.avg_degree = network.average_degree();
  s.total_demand = trips ? trips->total() : 0.0;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw validation_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw validation_error("cannot write file: " + path);
  out << content;
}

}  // namespace odflow::net
