#include "biscuit/program_io.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>

namespace biscuit {

namespace {

[[noreturn]] void fail(const YAML::Node& node, const std::string& why) {
  const auto mark = node.Mark();
  if (mark.is_null()) throw ConfigError(why);
  throw ConfigError("line " + std::to_string(mark.line + 1) + ": " + why);
}

template <typename T>
T get(const YAML::Node& node, const std::string& what) {
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(node, "bad value for '" + what + "'");
  }
}

const YAML::Node require(const YAML::Node& parent, const std::string& key) {
  auto n = parent[key];
  if (!n) fail(parent, "missing key '" + key + "'");
  return n;
}

BoundSpec parse_bound(const YAML::Node& n) {
  if (!n.IsMap()) fail(n, "bound must be a map");
  if (n["constant"]) return BoundSpec::constant(get<std::int64_t>(n["constant"], "constant"));
  if (n["param"]) return BoundSpec::param(get<std::string>(n["param"], "param"));
  if (n["data"]) {
    const auto d = n["data"];
    return BoundSpec::data(get<double>(require(d, "mean"), "mean"),
                           d["stddev"] ? get<double>(d["stddev"], "stddev") : 0.0,
                           d["min"] ? get<std::int64_t>(d["min"], "min") : 1);
  }
  fail(n, "bound needs one of constant, param, data");
}

CallSite parse_call(const YAML::Node& n) {
  CallSite c;
  c.target = get<std::string>(require(n, "target"), "target");
  if (n["probability"]) c.probability = get<double>(n["probability"], "probability");
  if (n["rounds"]) c.rounds = parse_bound(n["rounds"]);
  return c;
}

Loop parse_loop(const YAML::Node& n) {
  if (!n.IsMap()) fail(n, "loop must be a map");
  Loop l;
  l.id = get<std::string>(require(n, "id"), "id");
  l.bound = parse_bound(require(n, "bound"));
  if (n["start"]) l.start = get<std::int64_t>(n["start"], "start");
  if (n["step"]) l.step = get<std::int64_t>(n["step"], "step");
  if (l.step == 0) fail(n, "loop '" + l.id + "': step of 0");
  for (const auto& s : require(n, "body")) {
    if (s["work"]) {
      l.body.push_back({Work{get<std::int64_t>(s["work"], "work")}});
    } else if (s["loop"]) {
      l.body.push_back({parse_loop(s["loop"])});
    } else if (s["call"]) {
      l.body.push_back({parse_call(s["call"])});
    } else {
      fail(s, "loop body entries are work, loop or call");
    }
  }
  return l;
}

void emit_bound(YAML::Emitter& out, const BoundSpec& b) {
  out << YAML::Flow << YAML::BeginMap;
  if (const auto* c = std::get_if<ConstantBound>(&b.source)) {
    out << YAML::Key << "constant" << YAML::Value << c->value;
  } else if (const auto* p = std::get_if<ParamBound>(&b.source)) {
    out << YAML::Key << "param" << YAML::Value << p->name;
  } else {
    const auto& d = std::get<DataDependentBound>(b.source);
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap << YAML::Key << "mean"
        << YAML::Value << d.mean << YAML::Key << "stddev" << YAML::Value << d.stddev
        << YAML::Key << "min" << YAML::Value << d.min << YAML::EndMap;
  }
  out << YAML::EndMap;
}

void emit_call(YAML::Emitter& out, const CallSite& c) {
  out << YAML::BeginMap << YAML::Key << "call" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "target" << YAML::Value << c.target;
  if (c.probability < 1.0) out << YAML::Key << "probability" << YAML::Value << c.probability;
  if (c.rounds) {
    out << YAML::Key << "rounds" << YAML::Value;
    emit_bound(out, *c.rounds);
  }
  out << YAML::EndMap << YAML::EndMap;
}

void emit_loop(YAML::Emitter& out, const Loop& l) {
  out << YAML::BeginMap;
  out << YAML::Key << "id" << YAML::Value << l.id;
  out << YAML::Key << "bound" << YAML::Value;
  emit_bound(out, l.bound);
  if (l.start != 0) out << YAML::Key << "start" << YAML::Value << l.start;
  if (l.step != 1) out << YAML::Key << "step" << YAML::Value << l.step;
  out << YAML::Key << "body" << YAML::Value << YAML::BeginSeq;
  for (const auto& s : l.body) {
    if (const auto* w = std::get_if<Work>(&s.node)) {
      out << YAML::Flow << YAML::BeginMap << YAML::Key << "work" << YAML::Value << w->instructions
          << YAML::EndMap;
    } else if (const auto* inner = std::get_if<Loop>(&s.node)) {
      out << YAML::BeginMap << YAML::Key << "loop" << YAML::Value;
      emit_loop(out, *inner);
      out << YAML::EndMap;
    } else {
      emit_call(out, std::get<CallSite>(s.node));
    }
  }
  out << YAML::EndSeq << YAML::EndMap;
}

}  // namespace

Program parse_program(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError("line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  if (!root.IsMap()) throw ConfigError("program file must be a map");
  Program p;
  p.name = get<std::string>(require(root, "name"), "name");
  if (root["entry"]) p.entry = get<std::string>(root["entry"], "entry");
  if (root["sensitivity"]) p.sensitivity = get<double>(root["sensitivity"], "sensitivity");
  if (root["plain_mpki"]) p.plain_mpki = get<double>(root["plain_mpki"], "plain_mpki");
  if (root["params"]) {
    for (const auto& kv : root["params"]) {
      ParamDef def;
      const auto& v = kv.second;
      def.value = get<std::int64_t>(require(v, "value"), "value");
      if (v["train"]) def.train = get<std::vector<std::int64_t>>(v["train"], "train");
      if (v["run"]) {
        auto run = get<std::vector<std::int64_t>>(v["run"], "run");
        if (run.size() != 2 || run[0] > run[1] || run[0] < 1) fail(v["run"], "run must be [lo, hi]");
        def.run_lo = run[0];
        def.run_hi = run[1];
      }
      p.params[get<std::string>(kv.first, "param name")] = def;
    }
  }
  for (const auto& fn_node : require(root, "functions")) {
    Function fn;
    fn.name = get<std::string>(require(fn_node, "name"), "name");
    if (fn_node["local_params"]) {
      for (const auto& lp : fn_node["local_params"]) fn.local_params.insert(get<std::string>(lp, "local_params"));
    }
    for (const auto& item : require(fn_node, "body")) {
      if (item["work"]) {
        fn.body.push_back({Work{get<std::int64_t>(item["work"], "work")}});
      } else if (item["call"]) {
        fn.body.push_back({parse_call(item["call"])});
      } else if (item["nest"]) {
        const auto n = item["nest"];
        LoopNest nest;
        nest.root = parse_loop(require(n, "loop"));
        nest.true_coeffs = get<std::vector<double>>(require(n, "coeffs"), "coeffs");
        if (n["noise"]) nest.noise_frac = get<double>(n["noise"], "noise");
        fn.body.push_back({nest});
      } else {
        fail(item, "function body entries are work, call or nest");
      }
    }
    if (p.functions.contains(fn.name)) fail(fn_node, "duplicate function '" + fn.name + "'");
    p.functions[fn.name] = std::move(fn);
  }
  try {
    validate(p);
  } catch (const WorkloadError& e) {
    throw ConfigError(std::string("program '") + p.name + "': " + e.what());
  }
  return p;
}

Program load_program(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_program(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string dump_program(const Program& p) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "name" << YAML::Value << p.name;
  out << YAML::Key << "entry" << YAML::Value << p.entry;
  out << YAML::Key << "sensitivity" << YAML::Value << p.sensitivity;
  out << YAML::Key << "plain_mpki" << YAML::Value << p.plain_mpki;
  out << YAML::Key << "params" << YAML::Value << YAML::BeginMap;
  for (const auto& [name, def] : p.params) {
    out << YAML::Key << name << YAML::Value << YAML::Flow << YAML::BeginMap;
    out << YAML::Key << "value" << YAML::Value << def.value;
    if (!def.train.empty()) out << YAML::Key << "train" << YAML::Value << def.train;
    if (def.run_lo != 0 || def.run_hi != 0) {
      out << YAML::Key << "run" << YAML::Value << std::vector<std::int64_t>{def.run_lo, def.run_hi};
    }
    out << YAML::EndMap;
  }
  out << YAML::EndMap;
  out << YAML::Key << "functions" << YAML::Value << YAML::BeginSeq;
  for (const auto& [name, fn] : p.functions) {
    out << YAML::BeginMap << YAML::Key << "name" << YAML::Value << name;
    if (!fn.local_params.empty()) {
      out << YAML::Key << "local_params" << YAML::Value << YAML::Flow
          << std::vector<std::string>(fn.local_params.begin(), fn.local_params.end());
    }
    out << YAML::Key << "body" << YAML::Value << YAML::BeginSeq;
    for (const auto& item : fn.body) {
      if (const auto* w = std::get_if<Work>(&item.node)) {
        out << YAML::Flow << YAML::BeginMap << YAML::Key << "work" << YAML::Value
            << w->instructions << YAML::EndMap;
      } else if (const auto* c = std::get_if<CallSite>(&item.node)) {
        emit_call(out, *c);
      } else {
        const auto& nest = std::get<LoopNest>(item.node);
        out << YAML::BeginMap << YAML::Key << "nest" << YAML::Value << YAML::BeginMap;
        out << YAML::Key << "coeffs" << YAML::Value << YAML::Flow << nest.true_coeffs;
        out << YAML::Key << "noise" << YAML::Value << nest.noise_frac;
        out << YAML::Key << "loop" << YAML::Value;
        emit_loop(out, nest.root);
        out << YAML::EndMap << YAML::EndMap;
      }
    }
    out << YAML::EndSeq << YAML::EndMap;
  }
  out << YAML::EndSeq << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace biscuit
