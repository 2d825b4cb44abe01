// Experiment command line: stage subcommands over a key = value config file.
// Exit codes: 0 success, 2 configuration error, 3 stage failure.

#include <exception>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ked/bootstrap.hpp"
#include "ked/config.hpp"
#include "ked/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::string seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key = value config file");
  cmd->add_option("-s,--set", args.overrides,
                  "override a config key (key=value, repeatable; overrides the file)");
  cmd->add_option("-o,--out", args.out, "output directory (same as --set out=...)");
  cmd->add_option("--seed", args.seed, "global seed (same as --set seed=...)");
}

ked::ExperimentConfig build_config(const CommonArgs& args) {
  ked::KvConfig kv;
  if (!args.config_path.empty()) kv = ked::KvConfig::parse_file(args.config_path);
  for (const std::string& kvpair : args.overrides) {
    const auto eq = kvpair.find('=');
    if (eq == std::string::npos) {
      throw ked::ConfigError("--set expects key=value, got '" + kvpair + "'");
    }
    kv.set(kvpair.substr(0, eq), kvpair.substr(eq + 1));
  }
  if (!args.out.empty()) kv.set("out", args.out);
  if (!args.seed.empty()) kv.set("seed", args.seed);
  return ked::ExperimentConfig::from_kv(kv);
}

int run_compare(const std::vector<std::string>& paths, const std::string& output) {
  std::vector<ked::EvaluationReport> reports;
  for (const std::string& path : paths) {
    std::ifstream in(path);
    if (!in) {
      std::cerr << "cannot open report file: " << path << "\n";
      return 2;
    }
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      reports.push_back(ked::EvaluationReport::from_json(nlohmann::json::parse(line)));
    }
  }
  if (reports.empty()) {
    std::cerr << "no reports found in the given files\n";
    return 2;
  }
  const std::string table = ked::comparison_table(reports);
  std::cout << table;
  if (!output.empty()) std::ofstream(output) << table;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"knowledge-explaining distillation experiment pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  const std::vector<std::string> stage_names = {
      "ingest",  "train-teacher",     "find-superfeatures", "train-explaining-teacher",
      "distill", "chimeric-finetune", "evaluate",           "run"};
  for (const std::string& name : stage_names) {
    CLI::App* cmd = app.add_subcommand(
        name, name == "run" ? "execute every stage in order" : "execute the " + name + " stage");
    add_common(cmd, args);
  }
  std::vector<std::string> compare_paths;
  std::string compare_output;
  CLI::App* compare = app.add_subcommand("compare", "tabulate evaluation reports side by side");
  compare->add_option("reports", compare_paths, "reports.jsonl files to compare")->required();
  compare->add_option("-o,--output", compare_output, "also write the table to this file");

  CLI11_PARSE(app, argc, argv);
  const std::string stage = app.get_subcommands().front()->get_name();

  try {
    if (stage == "compare") return run_compare(compare_paths, compare_output);

    ked::Pipeline pipeline(build_config(args));
    if (stage == "ingest") {
      pipeline.ingest();
    } else if (stage == "train-teacher") {
      pipeline.ingest();
      pipeline.train_teacher();
    } else if (stage == "find-superfeatures") {
      pipeline.ingest();
      pipeline.find_superfeatures();
    } else if (stage == "train-explaining-teacher") {
      pipeline.ingest();
      pipeline.train_explaining_teacher();
    } else if (stage == "distill") {
      pipeline.ingest();
      pipeline.distill();
    } else if (stage == "chimeric-finetune") {
      pipeline.ingest();
      pipeline.chimeric_finetune();
    } else if (stage == "evaluate") {
      auto reports = pipeline.evaluate();
      std::cout << ked::comparison_table(reports);
    } else if (stage == "run") {
      auto reports = pipeline.run_all();
      std::cout << ked::comparison_table(reports);
    }
    return 0;
  } catch (const ked::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ked::StageError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
