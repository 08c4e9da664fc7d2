#include "credfuse/circuit_io.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <string>

#include "credfuse/error.hpp"

namespace credfuse {

using nlohmann::json;

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

json dist_to_json(const LeafDistribution& dist) {
  return std::visit(
      Overloaded{[](const CategoricalLeaf& c) {
                   return json{{"family", "categorical"},
                               {"params", std::vector<double>(c.log_probs().begin(), c.log_probs().end())}};
                 },
                 [](const DirichletLeaf& d) {
                   return json{{"family", "dirichlet"},
                               {"params", std::vector<double>(d.alpha().begin(), d.alpha().end())}};
                 }},
      dist);
}

LeafDistribution dist_from_json(const json& j) {
  const auto family = j.at("family").get<std::string>();
  auto params = j.at("params").get<std::vector<double>>();
  if (family == "categorical") return CategoricalLeaf(std::move(params));
  if (family == "dirichlet") return DirichletLeaf(std::move(params));
  throw FormatError("unknown leaf family '" + family + "'");
}

struct RawNode {
  std::string kind;
  std::vector<std::int64_t> children;
  const json* doc = nullptr;
};

}  // namespace

json circuit_to_json(const Circuit& circuit) {
  json nodes = json::array();
  for (NodeId id = 0; id < circuit.size(); ++id) {
    const Node& node = circuit.node(id);
    json n{{"id", id}};
    std::visit(Overloaded{[&](const SumNode& s) {
                            n["kind"] = "sum";
                            n["children"] = s.children;
                            n["weight_logits"] = s.weight_logits;
                          },
                          [&](const ProductNode& p) {
                            n["kind"] = "product";
                            n["children"] = p.children;
                          },
                          [&](const LeafNode& l) {
                            n["kind"] = "leaf";
                            n["var"] = l.var.index;
                            n["dist"] = dist_to_json(l.dist);
                          }},
               node);
    nodes.push_back(std::move(n));
  }
  return json{{"schema_version", kModelSchemaVersion},
              {"K", circuit.num_classes()},
              {"M", circuit.num_modalities()},
              {"root", circuit.root()},
              {"nodes", std::move(nodes)}};
}

Circuit circuit_from_json(const json& doc) {
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kModelSchemaVersion)
      throw FormatError("unsupported model schema_version " + std::to_string(version));
    const auto k = doc.at("K").get<std::size_t>();
    const auto m = doc.at("M").get<std::size_t>();
    const auto root = doc.at("root").get<std::int64_t>();

    std::map<std::int64_t, RawNode> raw;
    for (const json& n : doc.at("nodes")) {
      const auto id = n.at("id").get<std::int64_t>();
      RawNode r{n.at("kind").get<std::string>(), {}, &n};
      if (r.kind == "sum" || r.kind == "product") r.children = n.at("children").get<std::vector<std::int64_t>>();
      else if (r.kind != "leaf") throw FormatError("unknown node kind '" + r.kind + "'");
      if (!raw.emplace(id, std::move(r)).second) throw FormatError("duplicate node id " + std::to_string(id));
    }
    if (!raw.contains(root)) throw FormatError("root id " + std::to_string(root) + " not among nodes");

    // Kahn's algorithm, smallest ready id first, so an already topological
    // numbering is kept as is.
    std::map<std::int64_t, std::size_t> pending;
    std::map<std::int64_t, std::vector<std::int64_t>> parents;
    for (const auto& [id, r] : raw) {
      pending[id] = r.children.size();
      for (auto c : r.children) {
        if (!raw.contains(c))
          throw FormatError("node " + std::to_string(id) + " references unknown child " + std::to_string(c));
        parents[c].push_back(id);
      }
    }
    std::priority_queue<std::int64_t, std::vector<std::int64_t>, std::greater<>> ready;
    for (const auto& [id, count] : pending)
      if (count == 0) ready.push(id);

    Circuit circuit(k, m);
    std::map<std::int64_t, NodeId> placed;
    while (!ready.empty()) {
      const auto id = ready.top();
      ready.pop();
      const RawNode& r = raw.at(id);
      std::vector<NodeId> children;
      for (auto c : r.children) children.push_back(placed.at(c));
      NodeId new_id;
      if (r.kind == "sum") {
        new_id = circuit.add_sum(std::move(children), r.doc->at("weight_logits").get<std::vector<double>>());
      } else if (r.kind == "product") {
        new_id = circuit.add_product(std::move(children));
      } else {
        new_id = circuit.add_leaf(VarId{r.doc->at("var").get<std::size_t>()}, dist_from_json(r.doc->at("dist")));
      }
      placed[id] = new_id;
      for (auto p : parents[id])
        if (--pending[p] == 0) ready.push(p);
    }
    if (placed.size() != raw.size()) throw FormatError("node references form a cycle");
    circuit.set_root(placed.at(root));

    if (auto r = validate_smooth(circuit); !r.ok()) throw FormatError("loaded circuit is not smooth");
    if (auto r = validate_decomposable(circuit); !r.ok()) throw FormatError("loaded circuit is not decomposable");
    if (auto r = validate_root_scope(circuit); !r.ok()) throw FormatError("loaded circuit's root does not cover every variable");
    return circuit;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model document: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("invalid model structure: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(std::string("invalid model parameters: ") + e.what());
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json_file(const json& doc, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void save_circuit(const Circuit& circuit, const std::filesystem::path& path) {
  write_json_file(circuit_to_json(circuit), path);
}

Circuit load_circuit(const std::filesystem::path& path) { return circuit_from_json(read_json_file(path)); }

}  // namespace credfuse
