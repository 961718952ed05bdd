#include "hmrn/http_server.hpp"
#include "hmrn/synthetic.hpp"
#include "hmrn/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <thread>
#include <unistd.h>

using namespace hmrn;
namespace fs = std::filesystem;

namespace {

SyntheticConfig gallery_config(std::size_t scenes, std::uint64_t seed) {
  SyntheticConfig sc;
  sc.num_scenes = scenes;
  sc.K = 4;
  sc.N = 3;
  sc.X = 12;
  sc.seed = seed;
  sc.split = Split::Test;
  sc.id_prefix = "g";
  return sc;
}

Checkpoint random_checkpoint(Direction dir, const SyntheticData& d, std::uint64_t seed) {
  ModelConfig mc;
  mc.direction = dir;
  mc.X = 12;
  mc.E = 6;
  mc.D = 8;
  mc.vocab_size = d.vocab.size();
  Checkpoint ck;
  ck.model = Model::initialized(mc, seed);
  ck.vocab_hash = d.vocab.hash();
  return ck;
}

struct Fixture {
  SyntheticData data;
  std::shared_ptr<const ServiceModels> models;
  std::unique_ptr<RetrievalService> svc;

  explicit Fixture(std::size_t scenes = 24, std::uint64_t seed = 3)
      : data(generate_synthetic_dataset(gallery_config(scenes, seed))) {
    models = make_service_models(random_checkpoint(Direction::ImageText, data, 11),
                                 random_checkpoint(Direction::TextImage, data, 12));
    svc = std::make_unique<RetrievalService>(models, data.vocab);
    svc->add_gallery("g", data.dataset);
  }

  RoundRanking offline(const std::vector<std::string>& texts, ScoreMode mode) const {
    std::vector<std::vector<TokenId>> ids;
    for (const auto& t : texts) ids.push_back(tokenize_query(t, data.vocab).ids);
    return rank_gallery(ids, ids.size(), data.dataset, models->models(), mode);
  }
};

std::vector<std::string> ids_of(const nlohmann::json& ranking) {
  std::vector<std::string> out;
  for (const auto& r : ranking) out.push_back(r.at("image_id").get<std::string>());
  return out;
}

int status_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 200;
}

}  // namespace

TEST(Service, CreateStartsAtRoundZeroWithDistinctIds) {
  Fixture fx;
  const auto a = fx.svc->create_session("g");
  const auto b = fx.svc->create_session("g");
  EXPECT_EQ(a.at("round"), 0);
  EXPECT_TRUE(a.at("ranking").empty());
  EXPECT_NE(a.at("session_id"), b.at("session_id"));
  EXPECT_EQ(a.at("checkpoint_hash"), fx.models->checkpoint_hash);
  EXPECT_EQ(status_of([&] { fx.svc->create_session("missing"); }), 404);
}

TEST(Service, RankingsEqualTheOfflineEvaluatorInEveryMode) {
  Fixture fx;
  const auto& captions = fx.data.dataset.records[5].queries.captions;
  for (auto mode : {ScoreMode::ImageText, ScoreMode::TextImage, ScoreMode::Ensemble}) {
    const std::string sid = fx.svc->create_session("g", mode).at("session_id");
    std::vector<std::string> texts;
    for (const auto& c : captions) {
      texts.push_back(c);
      const auto res = fx.svc->add_query(sid, c, 1000);
      const auto off = fx.offline(texts, mode);
      EXPECT_EQ(ids_of(res.at("ranking")), off.ranked_ids) << to_string(mode);
      EXPECT_EQ(res.at("round"), texts.size());
      const auto full = fx.svc->current_ranking(sid);
      EXPECT_EQ(full.ranked_scores, off.ranked_scores);
    }
  }
}

TEST(Service, TopKTruncatesAndOversizedKReturnsTheWholeGallery) {
  Fixture fx;
  const std::string sid = fx.svc->create_session("g").at("session_id");
  EXPECT_EQ(fx.svc->add_query(sid, "red cup at left").at("ranking").size(), RetrievalService::kDefaultTopK);
  EXPECT_EQ(fx.svc->get_ranking(sid, 3).at("ranking").size(), 3u);
  EXPECT_EQ(fx.svc->get_ranking(sid, 10000).at("ranking").size(), fx.data.dataset.size());
}

TEST(Service, GetIsAPureRead) {
  Fixture fx;
  const std::string sid = fx.svc->create_session("g").at("session_id");
  fx.svc->add_query(sid, "red cup at left");
  const auto before = fx.svc->recomputations(sid);
  const auto r1 = fx.svc->get_ranking(sid);
  const auto r2 = fx.svc->get_ranking(sid);
  EXPECT_EQ(fx.svc->recomputations(sid), before);
  EXPECT_EQ(r1.at("ranking"), r2.at("ranking"));
  EXPECT_EQ(r1.at("round"), 1);
}

TEST(Service, RemovingTheLatestQueryRevertsToThePreviousRanking) {
  Fixture fx;
  const std::string sid = fx.svc->create_session("g").at("session_id");
  const auto& caps = fx.data.dataset.records[2].queries.captions;
  const auto round1 = fx.svc->add_query(sid, caps[0], 1000);
  fx.svc->add_query(sid, caps[1], 1000);
  const auto reverted = fx.svc->remove_query(sid, 1, 1000);
  EXPECT_EQ(reverted.at("round"), 1);
  EXPECT_EQ(reverted.at("ranking"), round1.at("ranking"));

  // Removing a middle query leaves the ranking of the remaining queries.
  fx.svc->add_query(sid, caps[1], 1000);
  fx.svc->add_query(sid, caps[2], 1000);
  const auto mid = fx.svc->remove_query(sid, 1, 1000);
  EXPECT_EQ(ids_of(mid.at("ranking")), fx.offline({caps[0], caps[2]}, ScoreMode::Ensemble).ranked_ids);

  fx.svc->remove_query(sid, 1);
  const auto empty = fx.svc->remove_query(sid, 0);
  EXPECT_EQ(empty.at("round"), 0);
  EXPECT_TRUE(empty.at("ranking").empty());
  EXPECT_EQ(status_of([&] { fx.svc->remove_query(sid, 0); }), 404);
}

TEST(Service, SessionsAreIsolated) {
  Fixture fx;
  const std::string a = fx.svc->create_session("g").at("session_id");
  const std::string b = fx.svc->create_session("g").at("session_id");
  const auto& caps = fx.data.dataset.records[7].queries.captions;
  const auto ra = fx.svc->add_query(a, caps[0], 1000);
  fx.svc->add_query(b, caps[1], 1000);
  fx.svc->add_query(b, caps[2], 1000);
  const auto again = fx.svc->get_ranking(a, 1000);
  EXPECT_EQ(again.at("round"), 1);
  EXPECT_EQ(again.at("ranking"), ra.at("ranking"));
  EXPECT_EQ(fx.svc->get_ranking(b).at("round"), 2);
}

TEST(Service, InvalidRequestsMapToClientErrors) {
  Fixture fx;
  const std::string sid = fx.svc->create_session("g").at("session_id");
  EXPECT_EQ(status_of([&] { fx.svc->add_query("nope", "red cup"); }), 404);
  EXPECT_EQ(status_of([&] { fx.svc->add_query(sid, "   "); }), 400);
  EXPECT_EQ(status_of([&] { fx.svc->explain(sid, "g_000000"); }), 400);  // no queries yet
  fx.svc->add_query(sid, "red cup at left");
  EXPECT_EQ(status_of([&] { fx.svc->explain(sid, "not-an-image"); }), 404);
  EXPECT_EQ(status_of([&] { fx.svc->thumbnail("g", "not-an-image"); }), 404);
  EXPECT_EQ(status_of([&] { fx.svc->load_gallery("unregistered"); }), 404);
  EXPECT_EQ(status_of([&] { fx.svc->load_gallery("x", "/nonexistent/manifest.json"); }), 400);
  Dataset dup = fx.data.dataset;
  dup.records.push_back(dup.records.front());
  EXPECT_EQ(status_of([&] { fx.svc->add_gallery("dup", dup); }), 400);
}

TEST(Service, SingleModelServiceRejectsUnsupportedModes) {
  const auto d = generate_synthetic_dataset(gallery_config(6, 1));
  RetrievalService svc(make_service_models(std::nullopt, random_checkpoint(Direction::TextImage, d, 1)), d.vocab);
  svc.add_gallery("g", d.dataset);
  EXPECT_NO_THROW(svc.create_session("g", ScoreMode::TextImage));
  EXPECT_EQ(status_of([&] { svc.create_session("g", ScoreMode::Ensemble); }), 400);
  EXPECT_EQ(svc.health().at("modes"), nlohmann::json::array({"ti"}));
}

TEST(Service, VocabularyMismatchIsRejected) {
  const auto d = generate_synthetic_dataset(gallery_config(4, 1));
  auto ck = random_checkpoint(Direction::TextImage, d, 1);
  ck.vocab_hash ^= 1;
  EXPECT_THROW(RetrievalService(make_service_models(std::nullopt, ck), d.vocab), Error);
}

TEST(Service, ExplanationWeightsAreDistributionsOverRegions) {
  Fixture fx;
  for (auto mode : {ScoreMode::Ensemble, ScoreMode::ImageText}) {
    const std::string sid = fx.svc->create_session("g", mode).at("session_id");
    const auto& rec = fx.data.dataset.records[4];
    for (const auto& c : rec.queries.captions) fx.svc->add_query(sid, c);
    const auto ex = fx.svc->explain(sid, rec.regions.image_id);
    ASSERT_EQ(ex.at("queries").size(), rec.queries.size());
    EXPECT_EQ(ex.at("num_regions"), 4);
    for (const auto& q : ex.at("queries")) {
      double sum = 0;
      for (double w : q.at("weights")) {
        EXPECT_GE(w, 0.0);
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-10);
      EXPECT_FALSE(q.at("box").is_null());
    }
    const auto full = fx.svc->current_ranking(sid);
    const auto pos = std::find(full.ranked_ids.begin(), full.ranked_ids.end(), rec.regions.image_id);
    EXPECT_EQ(ex.at("rank"), pos - full.ranked_ids.begin() + 1);
    EXPECT_EQ(ex.at("score"), full.ranked_scores[static_cast<std::size_t>(pos - full.ranked_ids.begin())]);
  }
}

TEST(Service, SingleRegionImageGivesAllWeightToThatRegion) {
  auto sc = gallery_config(5, 9);
  sc.K = 1;
  sc.N = 1;
  const auto d = generate_synthetic_dataset(sc);
  RetrievalService svc(make_service_models(random_checkpoint(Direction::ImageText, d, 2),
                                           random_checkpoint(Direction::TextImage, d, 3)),
                       d.vocab);
  svc.add_gallery("g", d.dataset);
  const std::string sid = svc.create_session("g").at("session_id");
  svc.add_query(sid, "blue desk at right");
  svc.add_query(sid, "red cup at left");
  const auto ex = svc.explain(sid, d.dataset.records[0].regions.image_id);
  for (const auto& q : ex.at("queries")) {
    EXPECT_EQ(q.at("top_region"), 0);
    EXPECT_NEAR(q.at("weights")[0].get<double>(), 1.0, 1e-15);
  }
}

TEST(Service, CheckpointSwapInvalidatesCachedRankings) {
  Fixture fx;
  const std::string sid = fx.svc->create_session("g").at("session_id");
  const auto before = fx.svc->add_query(sid, "red cup at left", 1000);
  auto swapped = make_service_models(random_checkpoint(Direction::ImageText, fx.data, 21),
                                     random_checkpoint(Direction::TextImage, fx.data, 22));
  fx.svc->set_models(swapped);
  const auto after = fx.svc->get_ranking(sid, 1000);
  EXPECT_EQ(after.at("checkpoint_hash"), swapped->checkpoint_hash);
  EXPECT_NE(after.at("checkpoint_hash"), before.at("checkpoint_hash"));
  std::vector<std::vector<TokenId>> ids{tokenize_query("red cup at left", fx.data.vocab).ids};
  EXPECT_EQ(ids_of(after.at("ranking")), rank_gallery(ids, 1, fx.data.dataset, swapped->models(), ScoreMode::Ensemble).ranked_ids);
}

// A trained text-image model attends each query to the region it describes.
TEST(Service, ExplanationTopRegionIsTheGeneratingRegionOnNoiseFreeData) {
  SyntheticConfig sc;
  sc.num_scenes = 300;
  sc.K = 4;
  sc.N = 4;
  sc.X = 24;
  sc.noise_sigma = 0.0;
  sc.seed = 31;
  const auto train = generate_synthetic_dataset(sc);
  sc.num_scenes = 20;
  sc.seed = 32;
  sc.split = Split::Test;
  sc.id_prefix = "t";
  const auto test = generate_synthetic_dataset(sc);

  TrainConfig tc;
  tc.model.direction = Direction::TextImage;
  tc.model.X = 24;
  tc.model.E = 8;
  tc.model.D = 16;
  tc.model.vocab_size = train.vocab.size();
  tc.epochs = 4;
  tc.batch_size = 20;
  tc.num_queries = 4;
  tc.lr = 3e-3;
  tc.tau = 20;
  tc.select_on_val = false;
  const auto res = train_model(train.dataset, nullptr, tc, train.vocab.hash());

  RetrievalService svc(make_service_models(std::nullopt, res.checkpoint), train.vocab);
  svc.add_gallery("t", test.dataset);
  std::size_t hits = 0, total = 0;
  for (std::size_t s = 0; s < test.dataset.size(); ++s) {
    const auto& rec = test.dataset.records[s];
    const std::string sid = svc.create_session("t", ScoreMode::TextImage).at("session_id");
    for (const auto& c : rec.queries.captions) svc.add_query(sid, c);
    const auto ex = svc.explain(sid, rec.regions.image_id);
    for (const auto& q : ex.at("queries")) {
      const auto j = q.at("index").get<std::size_t>();
      const auto top = q.at("top_region").get<std::size_t>();
      const auto& scene = test.scenes[s];
      // Regions with identical attributes are indistinguishable.
      const bool same = scene[top].color == scene[j].color && scene[top].object == scene[j].object &&
                        scene[top].position == scene[j].position;
      hits += same;
      ++total;
    }
  }
  EXPECT_EQ(hits, total);
}

// ---------------------------------------------------------------------------
// HTTP over loopback

namespace {

struct LiveServer {
  Fixture fx;
  HttpServer http{*fx.svc};
  int port = 0;
  std::thread thread;

  LiveServer() {
    port = http.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { http.listen_after_bind(); });
    http.wait_until_ready();
  }
  ~LiveServer() {
    http.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

nlohmann::json parse(const httplib::Result& r) { return nlohmann::json::parse(r->body); }

}  // namespace

TEST(Http, SessionLifecycleOverLoopback) {
  LiveServer srv;
  ASSERT_GT(srv.port, 0);
  auto cli = srv.client();
  auto health = cli.Get("/healthz");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(parse(health).at("checkpoint_hash"), srv.fx.models->checkpoint_hash);

  auto created = cli.Post("/sessions", R"({"gallery_id": "g"})", "application/json");
  ASSERT_TRUE(created);
  ASSERT_EQ(created->status, 200);
  const std::string sid = parse(created).at("session_id");
  EXPECT_EQ(parse(created).at("round"), 0);

  const auto& caps = srv.fx.data.dataset.records[1].queries.captions;
  auto q1 = cli.Post("/sessions/" + sid + "/queries", nlohmann::json{{"text", caps[0]}, {"k", 1000}}.dump(),
                     "application/json");
  ASSERT_EQ(q1->status, 200);
  auto q2 = cli.Post("/sessions/" + sid + "/queries", nlohmann::json{{"text", caps[1]}}.dump(), "application/json");
  ASSERT_EQ(q2->status, 200);
  EXPECT_EQ(parse(q2).at("round"), 2);
  EXPECT_EQ(ids_of(parse(q2).at("ranking")).size(), RetrievalService::kDefaultTopK);

  auto ranking = cli.Get("/sessions/" + sid + "/ranking?k=1000");
  ASSERT_EQ(ranking->status, 200);
  EXPECT_EQ(ids_of(parse(ranking).at("ranking")), srv.fx.offline({caps[0], caps[1]}, ScoreMode::Ensemble).ranked_ids);

  auto explain = cli.Get("/sessions/" + sid + "/explain/" + srv.fx.data.dataset.records[1].regions.image_id);
  ASSERT_EQ(explain->status, 200);
  EXPECT_EQ(parse(explain).at("queries").size(), 2u);

  auto removed = cli.Delete("/sessions/" + sid + "/queries/1?k=1000");
  ASSERT_EQ(removed->status, 200);
  EXPECT_EQ(parse(removed).at("ranking"), parse(q1).at("ranking"));

  auto thumb = cli.Get("/galleries/g/thumbnails/" + srv.fx.data.dataset.records[0].regions.image_id);
  ASSERT_EQ(thumb->status, 200);
  EXPECT_EQ(thumb->get_header_value("Content-Type"), "image/svg+xml");
  EXPECT_EQ(thumb->body.rfind("<svg", 0), 0u);
}

TEST(Http, ErrorsCarryStatusAndEnvelope) {
  LiveServer srv;
  auto cli = srv.client();
  const auto check = [&](const httplib::Result& r, int status) {
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, status);
    const auto body = parse(r);
    EXPECT_TRUE(body.contains("error"));
    EXPECT_EQ(body.at("checkpoint_hash"), srv.fx.models->checkpoint_hash);
    EXPECT_TRUE(body.contains("round"));
  };
  check(cli.Get("/sessions/unknown/ranking"), 404);
  check(cli.Post("/sessions", R"({"gallery_id": "nope"})", "application/json"), 404);
  check(cli.Post("/sessions", R"({})", "application/json"), 400);
  check(cli.Post("/sessions", "{not json", "application/json"), 400);
  check(cli.Post("/sessions", R"({"gallery_id": "g", "mode": "both"})", "application/json"), 400);
  const std::string sid = parse(cli.Post("/sessions", R"({"gallery_id": "g"})", "application/json")).at("session_id");
  check(cli.Post("/sessions/" + sid + "/queries", R"({"text": 5})", "application/json"), 400);
  check(cli.Delete("/sessions/" + sid + "/queries/abc"), 400);
  check(cli.Delete("/sessions/" + sid + "/queries/0"), 404);
  check(cli.Get("/sessions/" + sid + "/ranking?k=-1"), 400);
  check(cli.Get("/no/such/route"), 404);
}

TEST(Http, GalleryLoadFromManifest) {
  LiveServer srv;
  const fs::path dir = fs::temp_directory_path() / ("hmrn_svc_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  save_dataset(srv.fx.data.dataset, dir.string());
  srv.fx.svc->register_gallery("registered", (dir / "manifest.json").string());
  auto cli = srv.client();
  auto loaded = cli.Post("/galleries/registered/load", "", "application/json");
  ASSERT_EQ(loaded->status, 200);
  EXPECT_EQ(parse(loaded).at("size"), srv.fx.data.dataset.size());
  auto explicit_path = cli.Post("/galleries/other/load",
                                nlohmann::json{{"manifest", (dir / "manifest.json").string()}}.dump(), "application/json");
  ASSERT_EQ(explicit_path->status, 200);
  // A reloaded gallery ranks exactly like the in-memory one.
  const std::string a = srv.fx.svc->create_session("g").at("session_id");
  const std::string b = srv.fx.svc->create_session("other").at("session_id");
  EXPECT_EQ(srv.fx.svc->add_query(a, "red cup at left", 1000).at("ranking"),
            srv.fx.svc->add_query(b, "red cup at left", 1000).at("ranking"));
  fs::remove_all(dir);
}
