#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "star/core/binary_io.hpp"
#include "star/core/error.hpp"
#include "star/core/rng.hpp"
#include "star/serving/digest.hpp"
#include "star/serving/ingest.hpp"
#include "star/serving/store.hpp"
#include "star/text/bi_encoder.hpp"

using namespace star;
using namespace star::serving;
using text::TextKind;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("star_serving_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Deterministic fake: first component is the text length, second its first byte.
struct CountingEmbedder {
  std::size_t calls = 0;
  std::size_t rows = 0;
  Embedder fn() {
    return [this](TextKind kind, std::span<const std::string> texts) {
      ++calls;
      rows += texts.size();
      core::Tensor t(core::Shape{texts.size(), 3});
      for (std::size_t i = 0; i < texts.size(); ++i) {
        t.at(i, 0) = static_cast<double>(texts[i].size());
        t.at(i, 1) = texts[i].empty() ? 0.0 : static_cast<double>(texts[i][0]);
        t.at(i, 2) = static_cast<double>(kind);
      }
      return t;
    };
  }
};

UpdateEvent ev(std::uint64_t id, std::string text, TextKind kind = TextKind::job_description, std::int64_t t = 0) {
  return {id, kind, std::move(text), t};
}

}  // namespace

TEST(Digest, KnownVectors) {
  EXPECT_EQ(md5_hex(""), "d41d8cd98f00b204e9800998ecf8427e");
  EXPECT_EQ(md5_hex("abc"), "900150983cd24fb0d6963f7d28e17f72");
  EXPECT_EQ(md5_hex("message digest"), "f96b697d7cb7938d525a2f31aaf161d0");
  EXPECT_NE(md5_hex("senior engineer"), md5_hex("senior engineeR"));
  EXPECT_EQ(md5_hex("caf\xc3\xa9"), md5_hex(std::string("caf\xc3\xa9")));
}

TEST(StoreKeys, PackingAndNames) {
  const auto k = pack_key(parse_key_namespace("member_profile"), 12345);
  EXPECT_EQ(key_namespace(k), 1u);
  EXPECT_EQ(key_entity(k), 12345u);
  EXPECT_EQ(key_namespace_name(key_namespace(k)), "member_profile");
  EXPECT_EQ(key_namespace_name(parse_key_namespace("job")), "job");
  EXPECT_NE(parse_key_namespace("job"), parse_key_namespace("job_description"));
  EXPECT_THROW(pack_key(0, std::uint64_t{1} << 56), Error);
  EXPECT_THROW(parse_key_namespace("planet"), Error);
}

TEST(Store, RoundTripIsBitExact) {
  const auto dir = temp_dir("roundtrip");
  core::Rng rng(1);
  EmbeddingStore s(7, 5);
  std::vector<float> special = {0.0f, -0.0f, std::numeric_limits<float>::denorm_min(),
                                std::numeric_limits<float>::max(), -std::numeric_limits<float>::lowest()};
  s.upsert(99, special);
  for (std::uint64_t k = 0; k < 200; ++k) {
    std::vector<float> v(5);
    for (auto& x : v) {
      std::uint32_t bits = static_cast<std::uint32_t>(rng.next_u64());
      std::memcpy(&x, &bits, 4);
      if (!std::isfinite(x)) x = 1.0f;
    }
    s.upsert(1000 + k, v);
  }
  s.save(dir / "s.stes");
  const auto back = EmbeddingStore::load(dir / "s.stes");
  EXPECT_EQ(back.version(), 7u);
  EXPECT_EQ(back, s);
  const auto v = back.lookup(99);
  ASSERT_TRUE(v);
  EXPECT_EQ(std::memcmp(v->data(), special.data(), 20), 0);
  EXPECT_FALSE(back.lookup(5).has_value());
  // re-encoding is byte-identical
  EXPECT_EQ(back.encode(), s.encode());
}

TEST(Store, CorruptionIsRefused) {
  const auto dir = temp_dir("corrupt");
  EmbeddingStore s(1, 4);
  s.upsert(1, std::vector<float>{1, 2, 3, 4});
  s.upsert(2, std::vector<float>{5, 6, 7, 8});
  auto bytes = s.encode();

  auto truncated = bytes;
  truncated.resize(truncated.size() - 7);
  core::write_file_atomic(dir / "t.stes", truncated);
  try {
    EmbeddingStore::load(dir / "t.stes");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
  auto flipped = bytes;
  flipped[30] ^= 0x01;
  EXPECT_THROW(EmbeddingStore::decode(flipped), FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(EmbeddingStore::decode(magic), FormatError);
  EXPECT_THROW(s.upsert(3, std::vector<float>{1, 2}), ShapeError);
}

TEST(Store, SnapshotsSurviveSwapAndStagedIsConsumed) {
  const auto dir = temp_dir("swap");
  const auto cur = dir / "store.stes";
  EmbeddingStore v1(1, 2), v2(2, 2);
  v1.upsert(1, std::vector<float>{1, 1});
  v2.upsert(1, std::vector<float>{2, 2});
  v1.save(cur);
  const auto a = StoreSnapshot::open(cur);
  v2.save(staged_path(cur));
  swap_store(cur, staged_path(cur));
  const auto b = StoreSnapshot::open(cur);
  EXPECT_EQ((*a.lookup(1))[0], 1.0f);
  EXPECT_EQ((*b.lookup(1))[0], 2.0f);
  // restart: the current file is v2
  EXPECT_EQ(EmbeddingStore::load(cur).version(), 2u);
  EXPECT_THROW(swap_store(cur, staged_path(cur)), Error);

  core::write_file_atomic(staged_path(cur), std::string("garbage"));
  EXPECT_THROW(swap_store(cur, staged_path(cur)), Error);
  EXPECT_EQ(EmbeddingStore::load(cur).version(), 2u);
}

TEST(Ingest, ReplayedEventIsSkipped) {
  const auto dir = temp_dir("replay");
  CountingEmbedder emb;
  const std::vector<UpdateEvent> events = {ev(5, "staff engineer"), ev(5, "staff engineer")};
  const auto st = ingest(events, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  EXPECT_EQ(st.computed, 1u);
  EXPECT_EQ(st.skipped, 1u);
  EXPECT_EQ(st.updated_entities, 1u);
  EXPECT_EQ(emb.rows, 1u);
  const auto again = ingest(events, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  EXPECT_EQ(again.computed, 0u);
  EXPECT_EQ(again.skipped, 2u);
}

TEST(Ingest, ThirtyUnchangedOfHundred) {
  const auto dir = temp_dir("thirty");
  CountingEmbedder emb;
  std::vector<UpdateEvent> first;
  for (std::uint64_t i = 0; i < 100; ++i) first.push_back(ev(i, "text v1 of " + std::to_string(i)));
  ingest(first, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  std::vector<UpdateEvent> second;
  for (std::uint64_t i = 0; i < 100; ++i)
    second.push_back(ev(i, (i % 10 < 3 ? "text v1 of " : "text v2 of ") + std::to_string(i)));
  const auto st = ingest(second, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  EXPECT_EQ(st.skipped, 30u);
  EXPECT_EQ(st.computed, 70u);
  EXPECT_EQ(st.computed + st.skipped, st.total);
}

TEST(Ingest, EmptyStreamLeavesStoreUntouched) {
  const auto dir = temp_dir("empty");
  CountingEmbedder emb;
  const auto st = ingest({}, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  EXPECT_EQ(st, IngestStats{});
  EXPECT_FALSE(std::filesystem::exists(dir / "s.stes"));
  EXPECT_FALSE(std::filesystem::exists(dir / "c.tsv"));
}

TEST(Ingest, LatestTextWinsAndKindsAreSeparateKeys) {
  const auto dir = temp_dir("latest");
  CountingEmbedder emb;
  const std::vector<UpdateEvent> events = {ev(1, "a"), ev(1, "bbb"), ev(1, "profile", TextKind::member_profile)};
  const auto st = ingest(events, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  EXPECT_EQ(st.computed, 3u);
  EXPECT_EQ(st.updated_entities, 2u);
  const auto s = EmbeddingStore::load(dir / "s.stes");
  EXPECT_EQ((*s.lookup(pack_key(0, 1)))[0], 3.0f);
  EXPECT_EQ((*s.lookup(pack_key(1, 1)))[0], 7.0f);
}

TEST(Ingest, FailedWriteKeepsStoreAndCache) {
  const auto dir = temp_dir("fail");
  CountingEmbedder emb;
  ingest(std::vector<UpdateEvent>{ev(1, "x")}, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  const auto store_before = core::read_file_bytes(dir / "s.stes");
  const auto cache_before = core::read_file_text(dir / "c.tsv");
  Embedder broken = [](TextKind, std::span<const std::string> texts) {
    return core::Tensor(core::Shape{texts.size(), 5});  // wrong dim
  };
  EXPECT_THROW(ingest(std::vector<UpdateEvent>{ev(2, "y")}, broken, dir / "s.stes", dir / "c.tsv", {.dim = 3}),
               ShapeError);
  EXPECT_EQ(core::read_file_bytes(dir / "s.stes"), store_before);
  EXPECT_EQ(core::read_file_text(dir / "c.tsv"), cache_before);
  EXPECT_FALSE(std::filesystem::exists(staged_path(dir / "s.stes")));

  // unwritable store location
  EXPECT_THROW(ingest(std::vector<UpdateEvent>{ev(3, "z")}, emb.fn(), dir / "missing" / "s.stes", dir / "c.tsv",
                      {.dim = 3}),
               Error);
  EXPECT_EQ(core::read_file_text(dir / "c.tsv"), cache_before);
}

TEST(Ingest, PropertySkipsDependOnlyOnContentAndCacheMatchesStore) {
  core::Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dir = temp_dir("prop");
    std::vector<UpdateEvent> base;
    for (std::uint64_t i = 0; i < 30; ++i) base.push_back(ev(i, "t" + std::to_string(rng.below(3))));
    CountingEmbedder emb;
    ingest(base, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
    std::vector<UpdateEvent> next;
    for (std::uint64_t i = 0; i < 30; ++i) next.push_back(ev(i, "t" + std::to_string(rng.below(3))));
    auto shuffled = next;
    rng.shuffle(shuffled);

    const auto dir2 = temp_dir("prop2");
    std::filesystem::copy(dir / "s.stes", dir2 / "s.stes");
    std::filesystem::copy(dir / "c.tsv", dir2 / "c.tsv");
    const auto a = ingest(next, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
    const auto b = ingest(shuffled, emb.fn(), dir2 / "s.stes", dir2 / "c.tsv", {.dim = 3});
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.computed + a.skipped, a.total);
    EXPECT_EQ(EmbeddingStore::load(dir / "s.stes"), EmbeddingStore::load(dir2 / "s.stes"));

    const auto cache = DigestCache::load(dir / "c.tsv");
    const auto store = EmbeddingStore::load(dir / "s.stes");
    EXPECT_EQ(cache.size(), store.size());
    for (const auto& [key, digest] : cache.entries()) EXPECT_TRUE(store.contains(key));
  }
}

TEST(Ingest, LostStoreForcesRecompute) {
  const auto dir = temp_dir("lost");
  CountingEmbedder emb;
  const std::vector<UpdateEvent> events = {ev(1, "x")};
  ingest(events, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3});
  std::filesystem::remove(dir / "s.stes");
  EXPECT_EQ(ingest(events, emb.fn(), dir / "s.stes", dir / "c.tsv", {.dim = 3}).computed, 1u);
}

TEST(Ingest, EventsFileAndRealEncoder) {
  const auto dir = temp_dir("events");
  {
    std::ofstream out(dir / "e.jsonl");
    out << event_json_line(ev(1, "python developer", TextKind::job_description, 10)) << "\n";
    out << event_json_line(ev(2, "data scientist", TextKind::member_resume, 11)) << "\n";
  }
  const auto events = load_events(dir / "e.jsonl");
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[1].kind, TextKind::member_resume);
  text::BiEncoderModel model({.vocab_size = 256, .dim = 8, .layers = 1, .max_tokens = 16, .head_hidden = 4}, 1);
  ingest(events, model_embedder(model), dir / "s.stes", dir / "c.tsv", {.dim = 8});
  const auto s = EmbeddingStore::load(dir / "s.stes");
  const auto v = s.lookup(event_key(events[0]));
  ASSERT_TRUE(v);
  const auto want = model.embed(TextKind::job_description, "python developer");
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ((*v)[i], static_cast<float>(want[i]));

  {
    std::ofstream bad(dir / "bad.jsonl");
    bad << event_json_line(events[0]) << "\n{\"entity_id\": 3}\n";
  }
  try {
    load_events(dir / "bad.jsonl");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos);
  }
}
