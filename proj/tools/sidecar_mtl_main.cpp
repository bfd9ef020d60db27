// Copyright 2026 The sidecar-mtl authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end. Precedence for every setting:
// built-in defaults < --config JSON < command-line flags < SIDECAR_MTL_SEED.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smtl/pipeline.hpp"

namespace {

using nlohmann::json;

struct RunConfig {
  smtl::BackboneConfig backbone;
  smtl::SidecarConfig sidecar;
  smtl::SegmentPlan plan;
  uint64_t seed = 0;
  double lambda = 0.01;
  double learning_rate = 2e-4;
  size_t max_updates = 3000;
  size_t batch_size = 1;
  double collar = 0.25;
  std::string style = "left-aligned";
  size_t count = 100;
  size_t speakers = 2;
  size_t transcript_min = 3;
  size_t transcript_max = 5;
  double conversation_seconds = 20.0;
  bool gain_jitter = false;
  size_t speaker_pool = 4;
  bool paper_scale = false;
  std::string dataset;
  std::string out;
  std::string backbone_checkpoint;
  std::string sidecar_checkpoint;
  std::string metrics_log;
  std::string audio;
  std::string recording_id = "rec0";
  std::string rttm_out;
};

RunConfig run_config_from_json(const json& j) {
  smtl::detail::check_keys(
      j, "config",
      {"backbone",        "sidecar",
       "plan",            "seed",
       "lambda",          "learning_rate",
       "max_updates",     "batch_size",
       "collar",          "style",
       "count",           "speakers",
       "transcript_min",  "transcript_max",
       "conversation_seconds", "gain_jitter",
       "speaker_pool",    "paper_scale",
       "dataset",         "out",
       "backbone_checkpoint", "sidecar_checkpoint",
       "metrics_log",     "audio",
       "recording_id",    "rttm_out"});
  RunConfig c;
  if (j.contains("backbone")) c.backbone = smtl::backbone_config_from_json(j.at("backbone"));
  if (j.contains("sidecar")) c.sidecar = smtl::sidecar_config_from_json(j.at("sidecar"));
  if (j.contains("plan")) c.plan = smtl::plan_from_json(j.at("plan"));
  c.seed = smtl::detail::get_field<uint64_t>(j, "config", "seed", c.seed);
  c.lambda = smtl::detail::get_field<double>(j, "config", "lambda", c.lambda);
  c.learning_rate = smtl::detail::get_field<double>(j, "config", "learning_rate", c.learning_rate);
  c.max_updates = smtl::detail::get_field<size_t>(j, "config", "max_updates", c.max_updates);
  c.batch_size = smtl::detail::get_field<size_t>(j, "config", "batch_size", c.batch_size);
  c.collar = smtl::detail::get_field<double>(j, "config", "collar", c.collar);
  c.style = smtl::detail::get_field<std::string>(j, "config", "style", c.style);
  c.count = smtl::detail::get_field<size_t>(j, "config", "count", c.count);
  c.speakers = smtl::detail::get_field<size_t>(j, "config", "speakers", c.speakers);
  c.transcript_min =
      smtl::detail::get_field<size_t>(j, "config", "transcript_min", c.transcript_min);
  c.transcript_max =
      smtl::detail::get_field<size_t>(j, "config", "transcript_max", c.transcript_max);
  c.conversation_seconds = smtl::detail::get_field<double>(j, "config", "conversation_seconds",
                                                           c.conversation_seconds);
  c.gain_jitter = smtl::detail::get_field<bool>(j, "config", "gain_jitter", c.gain_jitter);
  c.speaker_pool = smtl::detail::get_field<size_t>(j, "config", "speaker_pool", c.speaker_pool);
  c.paper_scale = smtl::detail::get_field<bool>(j, "config", "paper_scale", c.paper_scale);
  c.dataset = smtl::detail::get_field<std::string>(j, "config", "dataset", c.dataset);
  c.out = smtl::detail::get_field<std::string>(j, "config", "out", c.out);
  c.backbone_checkpoint = smtl::detail::get_field<std::string>(j, "config", "backbone_checkpoint",
                                                               c.backbone_checkpoint);
  c.sidecar_checkpoint = smtl::detail::get_field<std::string>(j, "config", "sidecar_checkpoint",
                                                              c.sidecar_checkpoint);
  c.metrics_log = smtl::detail::get_field<std::string>(j, "config", "metrics_log", c.metrics_log);
  c.audio = smtl::detail::get_field<std::string>(j, "config", "audio", c.audio);
  c.recording_id =
      smtl::detail::get_field<std::string>(j, "config", "recording_id", c.recording_id);
  c.rttm_out = smtl::detail::get_field<std::string>(j, "config", "rttm_out", c.rttm_out);
  return c;
}

uint64_t parse_seed_env(const char* text) {
  errno = 0;
  char* end = nullptr;
  unsigned long long v = std::strtoull(text, &end, 10);
  if (errno != 0 || end == text || *end != '\0') {
    throw smtl::DataError(smtl::str_cat("SIDECAR_MTL_SEED: not an unsigned integer: \"", text,
                                        "\""));
  }
  return static_cast<uint64_t>(v);
}

const std::string& need(const std::string& v, const char* flag, const char* cmd) {
  if (v.empty()) throw smtl::DataError(smtl::str_cat(cmd, ": ", flag, " is required"));
  return v;
}

smtl::CorpusSpec corpus_spec(const RunConfig& cfg) {
  smtl::CorpusSpec s;
  s.style = smtl::parse_style(cfg.style);
  s.count = cfg.count;
  s.speakers = cfg.speakers;
  s.transcript_min = cfg.transcript_min;
  s.transcript_max = cfg.transcript_max;
  s.conversation_seconds = cfg.conversation_seconds;
  s.gain_jitter = cfg.gain_jitter;
  s.speaker_pool = cfg.speaker_pool;
  return s;
}

smtl::AdamConfig adam_config(const RunConfig& cfg, const char* cmd) {
  if (cfg.learning_rate <= 0) {
    throw smtl::DataError(smtl::str_cat(cmd, ": learning_rate must be > 0"));
  }
  smtl::AdamConfig a;
  a.lr = cfg.learning_rate;
  return a;
}

smtl::StepCallback step_logger(const std::string& path) {
  if (path.empty()) return {};
  return [path](const smtl::StepLog& sl) { smtl::append_jsonl(path, smtl::step_log_json(sl)); };
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

int cmd_gen_data(const RunConfig& cfg) {
  smtl::CorpusSpec spec = corpus_spec(cfg);
  spec.validate();
  need(cfg.out, "--out", "gen-data");
  auto corpus = smtl::gen_corpus(spec, cfg.seed);
  auto manifest = smtl::write_manifest(corpus, cfg.out);
  emit({{"manifest", manifest.string()},
        {"items", corpus.size()},
        {"style", smtl::style_name(spec.style)},
        {"seed", cfg.seed}});
  return 0;
}

int cmd_pretrain(const RunConfig& cfg) {
  cfg.backbone.validate();
  adam_config(cfg, "pretrain");
  need(cfg.dataset, "--dataset", "pretrain");
  need(cfg.out, "--out", "pretrain");
  auto corpus = smtl::load_corpus(cfg.dataset);
  auto res = smtl::pretrain_single_talker(corpus, cfg.backbone, adam_config(cfg, "pretrain"),
                                          cfg.max_updates, cfg.batch_size, cfg.seed,
                                          step_logger(cfg.metrics_log));
  res.backbone.freeze();
  smtl::save_backbone(cfg.out, res.backbone);
  emit({{"checkpoint", cfg.out},
        {"steps", res.log.size()},
        {"final_loss", res.log.empty() ? 0.0 : res.log.back().loss},
        {"params_digest", smtl::params_digest(res.backbone.params)}});
  return 0;
}

int cmd_train_sidecar(const RunConfig& cfg) {
  cfg.sidecar.validate();
  if (cfg.lambda < 0) throw smtl::DataError("train-sidecar: lambda must be >= 0");
  adam_config(cfg, "train-sidecar");
  need(cfg.backbone_checkpoint, "--backbone", "train-sidecar");
  need(cfg.dataset, "--dataset", "train-sidecar");
  need(cfg.out, "--out", "train-sidecar");
  smtl::Backbone bb = smtl::load_backbone(cfg.backbone_checkpoint);
  auto corpus = smtl::load_corpus(cfg.dataset);
  auto res = smtl::train_sidecar(bb, cfg.sidecar, corpus, adam_config(cfg, "train-sidecar"),
                                 cfg.lambda, cfg.max_updates, cfg.batch_size, cfg.seed,
                                 step_logger(cfg.metrics_log));
  json extra;
  extra["lambda"] = cfg.lambda;
  extra["backbone_digest"] = smtl::params_digest(bb.params);
  smtl::save_sidecar(cfg.out, res.sidecar, extra);
  emit({{"checkpoint", cfg.out},
        {"steps", res.log.size()},
        {"final_loss", res.log.empty() ? 0.0 : res.log.back().loss},
        {"lambda", cfg.lambda},
        {"backbone_digest", smtl::params_digest(bb.params)}});
  return 0;
}

int cmd_adapt_diar(const RunConfig& cfg) {
  cfg.plan.validate();
  adam_config(cfg, "adapt-diar");
  need(cfg.backbone_checkpoint, "--backbone", "adapt-diar");
  need(cfg.sidecar_checkpoint, "--sidecar", "adapt-diar");
  need(cfg.dataset, "--dataset", "adapt-diar");
  need(cfg.out, "--out", "adapt-diar");
  smtl::Backbone bb = smtl::load_backbone(cfg.backbone_checkpoint);
  smtl::Sidecar sc = smtl::load_sidecar(cfg.sidecar_checkpoint, true);
  auto corpus = smtl::load_corpus(cfg.dataset);
  auto res = smtl::adapt_diar(bb, std::move(sc), corpus, cfg.plan,
                              adam_config(cfg, "adapt-diar"), cfg.max_updates,
                              step_logger(cfg.metrics_log));
  json extra;
  extra["backbone_digest"] = smtl::params_digest(bb.params);
  smtl::save_sidecar(cfg.out, res.sidecar, extra);
  emit({{"checkpoint", cfg.out},
        {"steps", res.log.size()},
        {"final_loss", res.log.empty() ? 0.0 : res.log.back().loss}});
  return 0;
}

void check_pairing(const smtl::Backbone& bb, const json& sidecar_extra) {
  if (sidecar_extra.contains("backbone_digest") &&
      sidecar_extra.at("backbone_digest").get<std::string>() != smtl::params_digest(bb.params)) {
    throw smtl::DataError("sidecar checkpoint was trained against a different backbone");
  }
}

int cmd_eval_asr(const RunConfig& cfg) {
  need(cfg.backbone_checkpoint, "--backbone", "eval-asr");
  need(cfg.dataset, "--dataset", "eval-asr");
  smtl::Backbone bb = smtl::load_backbone(cfg.backbone_checkpoint);
  auto corpus = smtl::load_corpus(cfg.dataset);
  smtl::AsrReport rep;
  json out;
  if (cfg.sidecar_checkpoint.empty()) {
    rep = smtl::eval_asr_single(bb, corpus);
    out["mode"] = "single";
  } else {
    json extra;
    smtl::Sidecar sc = smtl::load_sidecar(cfg.sidecar_checkpoint, false, &extra);
    check_pairing(bb, extra);
    rep = smtl::eval_asr_multi(bb, sc, corpus);
    out["mode"] = "multi";
  }
  out.update(smtl::asr_report_json(rep));
  emit(out);
  return 0;
}

int cmd_eval_der(const RunConfig& cfg) {
  if (cfg.collar < 0) throw smtl::DataError("eval-der: collar must be >= 0");
  need(cfg.backbone_checkpoint, "--backbone", "eval-der");
  need(cfg.sidecar_checkpoint, "--sidecar", "eval-der");
  need(cfg.dataset, "--dataset", "eval-der");
  smtl::Backbone bb = smtl::load_backbone(cfg.backbone_checkpoint);
  json extra;
  smtl::Sidecar sc = smtl::load_sidecar(cfg.sidecar_checkpoint, false, &extra);
  check_pairing(bb, extra);
  auto corpus = smtl::load_corpus(cfg.dataset);
  smtl::DerReport rep = smtl::eval_der_corpus(bb, sc, corpus, cfg.collar);
  emit(smtl::der_report_json(rep, cfg.collar));
  return 0;
}

int cmd_diarize(const RunConfig& cfg) {
  cfg.plan.validate();
  need(cfg.backbone_checkpoint, "--backbone", "diarize");
  need(cfg.sidecar_checkpoint, "--sidecar", "diarize");
  need(cfg.audio, "--audio", "diarize");
  need(cfg.rttm_out, "--rttm-out", "diarize");
  smtl::Backbone bb = smtl::load_backbone(cfg.backbone_checkpoint);
  json extra;
  smtl::Sidecar sc = smtl::load_sidecar(cfg.sidecar_checkpoint, false, &extra);
  check_pairing(bb, extra);
  smtl::Tensor wave = smtl::load_tensor(cfg.audio);
  if (wave.rank() != 1) {
    throw smtl::DataError(smtl::str_cat("diarize: audio tensor must be rank 1, got rank ",
                                        wave.rank()));
  }
  smtl::DiarizeResult res = smtl::diarize_recording(bb, sc, wave.values(), cfg.plan);
  std::ofstream f(cfg.rttm_out);
  if (!f) throw smtl::DataError(smtl::str_cat("cannot open ", cfg.rttm_out));
  f << smtl::to_rttm(res.timeline, cfg.recording_id);
  f.close();
  emit({{"rttm", cfg.rttm_out},
        {"segments", res.segments},
        {"total_frames", res.total_frames},
        {"intervals", res.timeline.size()}});
  return 0;
}

int cmd_param_report(const RunConfig& cfg) {
  smtl::BackboneConfig bb_cfg = cfg.backbone;
  smtl::SidecarConfig sc_cfg = cfg.sidecar;
  if (cfg.paper_scale) {
    bb_cfg = smtl::BackboneConfig::paper_scale();
    sc_cfg = smtl::SidecarConfig::paper_scale(cfg.sidecar.n_speakers);
  }
  bb_cfg.validate();
  sc_cfg.validate();
  smtl::ParamReport rep = smtl::param_report(bb_cfg, sc_cfg);
  emit({{"backbone", rep.backbone},
        {"sidecar", rep.sidecar},
        {"diar_branch", rep.diar_branch},
        {"trainable", rep.trainable()},
        {"total", rep.total()},
        {"trainable_ratio", rep.trainable_ratio()},
        {"scale", cfg.paper_scale ? "paper" : "configured"}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sidecar-mtl: multi-talker ASR and diarization on a frozen CTC backbone"};
  app.require_subcommand(1);

  RunConfig staging;
  std::string config_path;
  std::vector<std::function<void(RunConfig&)>> applies;

  auto bind = [&](CLI::App* cmd, auto get, const char* name, const char* desc) {
    auto* opt = cmd->add_option(name, get(staging), desc)->capture_default_str();
    applies.push_back([opt, get, &staging](RunConfig& cfg) {
      if (opt->count() > 0) get(cfg) = get(staging);
    });
    return opt;
  };
  auto bind_flag = [&](CLI::App* cmd, auto get, const char* name, const char* desc) {
    auto* opt = cmd->add_flag(name, get(staging), desc);
    applies.push_back([opt, get, &staging](RunConfig& cfg) {
      if (opt->count() > 0) get(cfg) = get(staging);
    });
    return opt;
  };

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    bind(cmd, [](RunConfig& c) -> uint64_t& { return c.seed; }, "--seed",
         "RNG seed (env SIDECAR_MTL_SEED overrides)");
    bind(cmd, [](RunConfig& c) -> double& { return c.lambda; }, "--lambda",
         "diarization loss weight");
    bind(cmd, [](RunConfig& c) -> double& { return c.learning_rate; }, "--learning-rate",
         "Adam learning rate");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.max_updates; }, "--max-updates",
         "training steps");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.batch_size; }, "--batch-size",
         "items per update");
    bind(cmd, [](RunConfig& c) -> double& { return c.collar; }, "--collar",
         "DER scoring collar in seconds");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.dataset; }, "--dataset",
         "manifest.jsonl of the input corpus");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.out; }, "--out",
         "output directory (corpus or checkpoint)");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.backbone_checkpoint; }, "--backbone",
         "backbone checkpoint directory");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.sidecar_checkpoint; }, "--sidecar",
         "sidecar checkpoint directory");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.metrics_log; }, "--metrics-log",
         "append-only JSON-lines training log");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.audio; }, "--audio",
         "waveform tensor (.sdtn, rank 1) to diarize");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.recording_id; }, "--recording-id",
         "recording id written into RTTM");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.rttm_out; }, "--rttm-out",
         "output RTTM path");
    bind(cmd, [](RunConfig& c) -> std::string& { return c.style; }, "--style",
         "corpus style: single, left-aligned, delayed, conversation")
        ->check(CLI::IsMember({"single", "left-aligned", "delayed", "conversation"}));
    bind(cmd, [](RunConfig& c) -> size_t& { return c.count; }, "--count", "corpus size");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.speakers; }, "--speakers",
         "speakers per mixture");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.transcript_min; }, "--transcript-min",
         "min tokens per utterance");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.transcript_max; }, "--transcript-max",
         "max tokens per utterance");
    bind(cmd, [](RunConfig& c) -> double& { return c.conversation_seconds; },
         "--conversation-seconds", "length of generated conversations");
    bind_flag(cmd, [](RunConfig& c) -> bool& { return c.gain_jitter; }, "--gain-jitter",
              "draw per-speaker mixing gains from [0.5, 1.0]");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.speaker_pool; }, "--speaker-pool",
         "voices cycled through single-talker corpora");
    bind_flag(cmd, [](RunConfig& c) -> bool& { return c.paper_scale; }, "--paper-scale",
              "report counts for the paper-scale configuration");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.backbone.sample_rate; }, "--sample-rate",
         "input sample rate in Hz");
    bind(cmd, [](RunConfig& c) -> double& { return c.backbone.frame_ms; }, "--frame-ms",
         "frame length in milliseconds");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.backbone.d_model; }, "--d-model",
         "encoder width");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.backbone.n_layers; }, "--n-layers",
         "encoder layers");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.backbone.n_heads; }, "--n-heads",
         "attention heads");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.backbone.ffn_dim; }, "--ffn-dim",
         "feed-forward width");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.backbone.insertion_layer; },
         "--insertion-layer", "encoder layer the sidecar attaches after");
    bind_flag(cmd, [](RunConfig& c) -> bool& { return c.backbone.distance_bias; },
              "--distance-bias,!--no-distance-bias", "linear distance attention bias");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.io_channels; }, "--io-channels",
         "sidecar embedding channels (must match --d-model)");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.bottleneck_channels; },
         "--bottleneck-channels", "sidecar bottleneck width");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.hidden_channels; },
         "--hidden-channels", "sidecar block width");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.kernel; }, "--kernel",
         "sidecar depthwise kernel size");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.blocks_per_repeat; },
         "--blocks-per-repeat", "dilated blocks per repeat");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.repeats; }, "--repeats",
         "sidecar repeat count");
    bind(cmd, [](RunConfig& c) -> size_t& { return c.sidecar.n_speakers; }, "--n-speakers",
         "separated streams");
    bind(cmd, [](RunConfig& c) -> double& { return c.plan.segment_seconds; },
         "--segment-seconds", "diarization segment length");
    bind(cmd, [](RunConfig& c) -> double& { return c.plan.shared_seconds; }, "--shared-seconds",
         "overlap between adjacent segments");
  };

  struct Cmd {
    const char* name;
    const char* desc;
    int (*run)(const RunConfig&);
  };
  const std::vector<Cmd> cmds = {
      {"gen-data", "generate a synthetic corpus and write its manifest", cmd_gen_data},
      {"pretrain", "train the single-talker CTC backbone, then freeze it", cmd_pretrain},
      {"train-sidecar", "train the sidecar and diarization branch on mixtures",
       cmd_train_sidecar},
      {"adapt-diar", "adapt the sidecar on segmented conversations", cmd_adapt_diar},
      {"eval-asr", "report token error rate (permuted when --sidecar is given)", cmd_eval_asr},
      {"eval-der", "report diarization error rate on a mixture corpus", cmd_eval_der},
      {"diarize", "diarize one long recording into an RTTM file", cmd_diarize},
      {"param-report", "print parameter counts for the configured models", cmd_param_report},
  };
  for (const Cmd& c : cmds) add_common(app.add_subcommand(c.name, c.desc));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) {
      std::ifstream f(config_path);
      if (!f) throw smtl::DataError(smtl::str_cat("cannot open config ", config_path));
      json j;
      try {
        j = json::parse(f);
      } catch (const json::exception& e) {
        throw smtl::DataError(smtl::str_cat("config ", config_path, ": ", e.what()));
      }
      cfg = run_config_from_json(j);
    }
    for (const auto& apply : applies) apply(cfg);
    if (const char* env = std::getenv("SIDECAR_MTL_SEED")) cfg.seed = parse_seed_env(env);

    for (const Cmd& c : cmds) {
      if (app.get_subcommand(c.name)->parsed()) return c.run(cfg);
    }
    std::cerr << "sidecar-mtl: no subcommand selected\n";
    return 1;
  } catch (const smtl::NumericError& e) {
    std::cerr << "sidecar-mtl: numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "sidecar-mtl: error: " << e.what() << "\n";
    return 2;
  }
}
