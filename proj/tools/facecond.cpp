#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>

#include "facecond/cli.hpp"
#include "facecond/textio.hpp"

namespace {

using namespace facecond;

// Every subcommand accepts --config <file> plus --<key> <value> for each
// Config field. The file loads first, flags override it, FACECOND_SEED
// overrides both.
struct ConfigFlags {
  std::string path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "key=value config file");
    for (const std::string& key : Config::keys()) {
      app->add_option("--" + key, values[key], "config field " + key);
    }
  }

  Config resolve(CLI::App* app) const {
    Config c = path.empty() ? Config{} : Config::load(path);
    for (const auto& [key, value] : values) {
      if (app->count("--" + key) > 0) c.set(key, value);
    }
    c.apply_env_overrides();
    c.validate();
    return c;
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  try {
    for (const std::string& part : split(s, ',')) out.push_back(static_cast<std::uint64_t>(parse_int(part, 0)));
  } catch (const DataError&) {
    throw ConfigError("gradcheck: bad seed list '" + s + "'");
  }
  if (out.empty()) throw ConfigError("gradcheck: no seeds");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"facecond: identity-conditioned toy video diffusion"};
  app.require_subcommand(1);

  std::map<CLI::App*, ConfigFlags> flags;
  auto command = [&](const std::string& name, const std::string& help) {
    CLI::App* sub = app.add_subcommand(name, help);
    flags[sub].attach(sub);
    return sub;
  };

  std::string out, data, checkpoint, reference, samples, references, report_out, seeds = "1,2,3,4,5";
  std::uint64_t identity_seed = 0;
  int n = 1;

  CLI::App* datagen = command("datagen", "generate the filtered image and video pair datasets");
  datagen->add_option("--out", out, "output directory")->required();

  CLI::App* train = command("train", "train the adapters and write checkpoints, curve and manifest");
  train->add_option("--data", data, "dataset directory")->required();
  train->add_option("--out", out, "output directory")->required();

  CLI::App* sample = command("sample", "sample conditioned clips from a checkpoint");
  sample->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  auto* seed_opt = sample->add_option("--identity-seed", identity_seed, "render a frontal reference of this identity");
  auto* ref_opt = sample->add_option("--reference", reference, "MMDS file whose first frame is the reference");
  seed_opt->excludes(ref_opt);
  sample->add_option("--n", n, "number of clips");
  sample->add_option("--out", out, "output directory")->required();

  CLI::App* eval = command("eval", "score sampled clips against their references");
  eval->add_option("--samples", samples, "frame records")->required();
  eval->add_option("--references", references, "reference records")->required();
  eval->add_option("--out", report_out, "machine-readable report file");

  CLI::App* gradcheck = command("gradcheck", "finite-difference gradient suite on the small config");
  gradcheck->add_option("--seeds", seeds, "comma-separated seeds");

  CLI::App* ablate = command("ablate", "train every ablation variant from shared base pretraining");
  ablate->add_option("--data", data, "dataset directory")->required();
  ablate->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const Config c = flags[sub].resolve(sub);
    if (sub == datagen) {
      std::cout << cmd_datagen(c, out).text();
    } else if (sub == train) {
      const TrainOutputs r = cmd_train(c, data, out);
      std::cout << r.manifest;
    } else if (sub == sample) {
      SampleRequest req;
      if (sample->count("--identity-seed") > 0) req.identity_seed = identity_seed;
      req.reference_path = reference;
      req.n = n;
      cmd_sample(c, checkpoint, req, out);
      std::cout << "wrote " << n << " clips to " << out << "\n";
    } else if (sub == eval) {
      const EvalReport r = cmd_eval(c, samples, references);
      std::cout << report_text(r);
      if (!report_out.empty()) write_text_file(report_out, report_kv(r));
    } else if (sub == gradcheck) {
      const GradcheckSummary s = cmd_gradcheck(parse_seeds(seeds));
      std::cout << s.text;
      if (s.failures > 0) return kExitNumeric;
    } else if (sub == ablate) {
      const AblationResult r = cmd_ablate(c, data, out);
      std::cout << r.metrics;
    }
  } catch (const std::exception& e) {
    std::cerr << "facecond: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}
