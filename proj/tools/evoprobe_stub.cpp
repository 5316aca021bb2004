// evoprobe-stub: local similarity endpoint for trying the remote oracle.
// Scores 100 * cos(E x, E r) for a random embedding E and a reference r,
// read from --reference or drawn uniformly from --seed.

#include <csignal>
#include <cstdio>
#include <random>
#include <thread>

#include "CLI11.hpp"

#include "evoprobe/oracles.hpp"
#include "evoprobe/stub_server.hpp"

using namespace evoprobe;

int main(int argc, char** argv) {
  CLI::App app{"Similarity-score stub server"};
  std::string host = "127.0.0.1", reference_path, point_path = "/point", score_key = "similarity";
  int port = 8080;
  std::size_t dimension = 0, rows = 64;
  std::uint64_t seed = 0;
  int delay_ms = 0;
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Port (0 picks a free one)");
  app.add_option("--dimension", dimension, "Input dimension")->required();
  app.add_option("--rows", rows, "Embedding dimension");
  app.add_option("--seed", seed, "Seed for the embedding and the reference");
  app.add_option("--reference", reference_path, "Reference point file (.csv or binary)")->check(CLI::ExistingFile);
  app.add_option("--point-path", point_path, "JSON pointer of the point in the request");
  app.add_option("--score-key", score_key, "Key of the score in the response");
  app.add_option("--delay-ms", delay_ms, "Artificial latency per request");
  CLI11_PARSE(app, argc, argv);

  std::vector<double> reference;
  if (!reference_path.empty()) {
    reference = load_point(reference_path, point_format_for(reference_path)).vector();
    if (reference.size() != dimension) {
      std::fprintf(stderr, "error: reference has %zu values, expected %zu\n", reference.size(), dimension);
      return 2;
    }
  } else {
    std::mt19937_64 rng(seed ^ 0x5eed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    reference.resize(dimension);
    for (double& v : reference) v = u(rng);
  }
  const Embedding embedding = Embedding::random(rows, dimension, seed);
  const std::vector<double> reference_embedding = embedding.apply(reference);

  StubOptions options;
  options.point_path = point_path;
  options.score_key = score_key;
  options.delay = std::chrono::milliseconds(delay_ms);
  options.score = [&](const std::vector<double>& x) {
    if (x.size() != dimension) {
      throw std::invalid_argument("expected " + std::to_string(dimension) + " values, got " +
                                  std::to_string(x.size()));
    }
    return 100.0 * cosine_similarity(embedding.apply(x), reference_embedding);
  };

  // Block termination signals before the server threads start so they all
  // inherit the mask, then wait for one here.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  StubServer server(options, host, port);
  std::printf("listening on %s\n", server.url().c_str());
  std::fflush(stdout);

  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  std::fprintf(stderr, "served %zu requests\n", server.requests().size());
  return 0;
}
