// Synthetic agent front-end: scenario generation, stream playback against a
// live server, and vocabulary training from simulated descriptors.

#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "cslam/bow.hpp"
#include "cslam/errors.hpp"
#include "cslam/simulator.hpp"

namespace fs = std::filesystem;

namespace {

bool parse_hostport(const std::string& addr, std::string& host, int& port) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) return false;
  host = addr.substr(0, colon);
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (...) {
    return false;
  }
  return port > 0 && port <= 65535;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-agent front-end simulator"};
  app.require_subcommand(1);

  // sim generate --scenario file --out dir
  auto* generate_cmd = app.add_subcommand("generate", "generate agent streams and ground truth");
  std::string gen_scenario, gen_out;
  generate_cmd->add_option("--scenario", gen_scenario, "scenario file")->required();
  generate_cmd->add_option("--out", gen_out, "output directory")->required();

  // sim play --log file --server host:port --rate r
  auto* play_cmd = app.add_subcommand("play", "replay a recorded stream to a server");
  std::string play_log, play_server;
  double play_rate = 0.0;
  play_cmd->add_option("--log", play_log, "stream log file")->required();
  play_cmd->add_option("--server", play_server, "server address host:port")->required();
  play_cmd->add_option("--rate", play_rate,
                       "realtime factor (1 = recorded timing, 0 = as fast as possible)");

  // sim init-scenario --agents n --out file
  auto* init_cmd = app.add_subcommand("init-scenario", "write an overlapping example scenario");
  int init_agents = 3;
  std::uint64_t init_seed = 1;
  std::string init_out;
  init_cmd->add_option("--agents", init_agents, "number of agents")->check(CLI::Range(1, 16));
  init_cmd->add_option("--seed", init_seed, "scenario seed");
  init_cmd->add_option("--out", init_out, "output scenario file")->required();

  // sim vocab --scenario file --out vocab
  auto* vocab_cmd = app.add_subcommand("vocab", "train a vocabulary from simulated descriptors");
  std::string vocab_scenario, vocab_out;
  int vocab_k = 9, vocab_depth = 3, vocab_corpus = 8000;
  std::uint64_t vocab_seed = 7;
  vocab_cmd->add_option("--scenario", vocab_scenario, "scenario file")->required();
  vocab_cmd->add_option("--out", vocab_out, "output vocabulary file")->required();
  vocab_cmd->add_option("--k", vocab_k, "branching factor");
  vocab_cmd->add_option("--depth", vocab_depth, "tree depth");
  vocab_cmd->add_option("--corpus", vocab_corpus, "max descriptors sampled for training");
  vocab_cmd->add_option("--seed", vocab_seed, "training seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*generate_cmd) {
      const cslam::Scenario scenario = cslam::Scenario::load(gen_scenario);
      const cslam::SimResult sim = cslam::generate(scenario);
      fs::create_directories(gen_out);
      for (const auto& stream : sim.streams) {
        const std::string path =
            gen_out + "/stream_agent_" + std::to_string(stream.agent_id) + ".log";
        cslam::save_stream(stream, path);
        std::cout << "agent " << stream.agent_id << " (" << stream.label << "): "
                  << stream.messages.size() << " keyframes, " << stream.bytes.size()
                  << " bytes, path " << stream.path_length_m << " m -> " << path << "\n";
      }
      sim.ground_truth.save_tum(gen_out);
      std::cout << "ground truth written to " << gen_out << "/gt_agent_<id>.tum\n";
      return 0;
    }
    if (*play_cmd) {
      std::string host;
      int port = 0;
      if (!parse_hostport(play_server, host, port)) {
        std::cerr << "error: --server expects host:port\n";
        return 1;
      }
      const auto bytes = cslam::load_stream_bytes(play_log);
      const cslam::PlayReport report = cslam::play_stream(bytes, host, port, play_rate);
      std::cout << "sent " << report.frames_sent << " frames, " << report.bytes_sent
                << " bytes in " << report.wall_time_s << " s\n";
      if (!report.completed) {
        std::cerr << "connection lost: " << report.error << "\n";
        return 2;
      }
      return 0;
    }
    if (*init_cmd) {
      cslam::default_scenario(init_agents, init_seed).save(init_out);
      std::cout << "wrote scenario for " << init_agents << " agents to " << init_out << "\n";
      return 0;
    }
    if (*vocab_cmd) {
      const cslam::Scenario scenario = cslam::Scenario::load(vocab_scenario);
      const cslam::SimResult sim = cslam::generate(scenario);
      const auto corpus = cslam::collect_descriptor_corpus(sim, vocab_corpus, vocab_seed);
      std::cout << "training on " << corpus.size() << " descriptors (k=" << vocab_k
                << ", L=" << vocab_depth << ")\n";
      const auto vocabulary = cslam::Vocabulary::train(corpus, vocab_k, vocab_depth, vocab_seed);
      vocabulary.save(vocab_out);
      std::cout << "vocabulary with " << vocabulary.num_words() << " words -> " << vocab_out
                << "\n";
      return 0;
    }
  } catch (const cslam::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
