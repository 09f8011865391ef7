#include "normprior/corpus.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "normprior/error.hpp"
#include "normprior/rng.hpp"
#include "normprior/surrogate.hpp"
#include "normprior/text.hpp"
#include "test_util.hpp"

namespace normprior::corpus {
namespace {

std::vector<LabeledExample> balanced(int per_label) {
  std::vector<LabeledExample> out;
  for (int i = 0; i < per_label; ++i) {
    out.push_back({"p" + std::to_string(i), "good " + std::to_string(i),
                   Label::kNormative, Source::kUser, Split::kUnassigned});
    out.push_back({"n" + std::to_string(i), "bad " + std::to_string(i),
                   Label::kNonNormative, Source::kUser, Split::kUnassigned});
  }
  return out;
}

// ---- explode_pairs --------------------------------------------------------

TEST(ExplodePairs, SinglePair) {
  const auto ex = explode_pairs({{"g1", "He shares his toys.", "He grabs the toys.", 2001}});
  ASSERT_EQ(ex.size(), 2u);
  EXPECT_EQ(ex[0].label, Label::kNormative);
  EXPECT_EQ(ex[0].id, "g1+");
  EXPECT_EQ(ex[0].text, "He shares his toys.");
  EXPECT_EQ(ex[1].label, Label::kNonNormative);
  EXPECT_EQ(ex[1].id, "g1-");
  EXPECT_EQ(ex[1].split, Split::kUnassigned);
}

TEST(ExplodePairs, Empty) { EXPECT_TRUE(explode_pairs({}).empty()); }

TEST(ExplodePairs, ThreePairs) {
  const std::vector<PanelPair> pairs{{"a", "x1", "y1", {}}, {"b", "x2", "y2", {}},
                                     {"c", "x3", "y3", {}}};
  const auto ex = explode_pairs(pairs);
  ASSERT_EQ(ex.size(), 6u);
  std::set<std::string> ids;
  int normative = 0;
  for (const auto& e : ex) {
    ids.insert(e.id);
    normative += e.label == Label::kNormative;
  }
  EXPECT_EQ(ids, (std::set<std::string>{"a+", "a-", "b+", "b-", "c+", "c-"}));
  EXPECT_EQ(normative, 3);
}

TEST(ExplodePairs, DuplicateIdNamed) {
  try {
    explode_pairs({{"dup", "x", "y", {}}, {"dup", "u", "v", {}}});
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dup"), std::string::npos);
  }
}

TEST(ExplodePairs, InvariantViolationsRejected) {
  EXPECT_THROW(explode_pairs({{"s", "same", "same", {}}}), ValidationError);
  EXPECT_THROW(explode_pairs({{"e", "  ", "y", {}}}), ValidationError);
}

TEST(ExplodePairs, AlwaysBalanced) {
  for (int n : {1, 7, 40}) {
    const auto ex = explode_pairs(generate_surrogate(n, 3));
    const auto pos = std::count_if(ex.begin(), ex.end(), [](const auto& e) {
      return e.label == Label::kNormative;
    });
    EXPECT_EQ(static_cast<std::size_t>(pos) * 2, ex.size());
  }
}

// ---- anonymize ------------------------------------------------------------

CharacterLexicon lex(std::initializer_list<std::pair<const std::string, Pronoun>> e) {
  return CharacterLexicon{std::map<std::string, Pronoun>(e)};
}

TEST(Anonymize, SentenceInitialCapitalized) {
  EXPECT_EQ(anonymize("Gallant shares his toys.", lex({{"Gallant", Pronoun::kHe}})),
            "He shares his toys.");
}

TEST(Anonymize, NoMatchIsIdentity) {
  EXPECT_EQ(anonymize("She waves.", lex({{"Goofus", Pronoun::kHe}})), "She waves.");
}

TEST(Anonymize, PossessiveRule) {
  EXPECT_EQ(anonymize("Anakin warns Anakin's friend.", lex({{"Anakin", Pronoun::kHe}})),
            "He warns his friend.");
  EXPECT_EQ(anonymize("Leia takes Leia\xE2\x80\x99s blaster.", lex({{"Leia", Pronoun::kShe}})),
            "She takes her blaster.");
  EXPECT_EQ(anonymize("Then Sam's dog barks.", lex({{"Sam", Pronoun::kThey}})),
            "Then their dog barks.");
}

TEST(Anonymize, WholeWordsOnlyCaseSensitive) {
  const auto l = lex({{"Al", Pronoun::kHe}});
  EXPECT_EQ(anonymize("Alice meets Al.", l), "Alice meets he.");
  EXPECT_EQ(anonymize("al waves.", l), "al waves.");
}

TEST(Anonymize, MultiWordNamesPreferLongest) {
  const auto l = lex({{"Darth", Pronoun::kHe}, {"Darth Sidious", Pronoun::kHe}});
  EXPECT_EQ(anonymize("Darth Sidious lies. Darth listens.", l), "He lies. He listens.");
}

TEST(Anonymize, Idempotent) {
  const auto l = lex({{"Goofus", Pronoun::kHe}, {"Gallant", Pronoun::kHe},
                      {"Padme", Pronoun::kShe}, {"Rex", Pronoun::kThey}});
  const std::vector<std::string> corpus{
      "Gallant shares his toys.", "Goofus grabs Gallant's ball.",
      "When Padme arrives, Rex leaves.", "Nobody is named here!",
      "\"Goofus,\" says Gallant. Goofus's dog runs.", ""};
  for (const auto& t : corpus) {
    const auto once = anonymize(t, l);
    EXPECT_EQ(anonymize(once, l), once) << t;
  }
}

TEST(Lexicon, ParsesTabFileWithDefaults) {
  const auto l = parse_lexicon("# characters\nGoofus\the\nPadme\tshe\nRex\n\n", "lex");
  EXPECT_EQ(l.entries.at("Goofus"), Pronoun::kHe);
  EXPECT_EQ(l.entries.at("Padme"), Pronoun::kShe);
  EXPECT_EQ(l.entries.at("Rex"), Pronoun::kThey);
}

TEST(Lexicon, RejectsUnknownPronoun) {
  try {
    parse_lexicon("Goofus\the\nGallant\tit\n", "lex.tsv");
    FAIL();
  } catch (const RecordError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.field(), "pronoun");
  }
}

// ---- split_corpus ---------------------------------------------------------

TEST(Split, TenExamplesStratifiedReproducible) {
  const auto ex = balanced(5);
  const auto a = split_corpus(ex, 0.5, 7);
  const auto b = split_corpus(ex, 0.5, 7);
  ASSERT_EQ(a.train.size(), 5u);
  ASSERT_EQ(a.test.size(), 5u);
  const auto pos = std::count_if(a.train.begin(), a.train.end(),
                                 [](const auto& e) { return e.label == Label::kNormative; });
  EXPECT_TRUE(pos == 2 || pos == 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
}

TEST(Split, SeedsChangeMembershipNotSizes) {
  const auto ex = balanced(2);
  const auto a = split_corpus(ex, 0.5, 1);
  const auto b = split_corpus(ex, 0.5, 2);
  EXPECT_EQ(a.train.size(), b.train.size());
  EXPECT_EQ(a.test.size(), b.test.size());
  bool differs = false;
  for (std::uint64_t seed = 2; seed < 12 && !differs; ++seed) {
    differs = split_corpus(ex, 0.5, seed).train != a.train;
  }
  EXPECT_TRUE(differs);
}

TEST(Split, RoundHalfUpOnOddCorpus) {
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 1387; ++i) {
    ex.push_back({"s" + std::to_string(i), "t", i % 2 ? Label::kNonNormative : Label::kNormative,
                  Source::kGoofusGallant, Split::kUnassigned});
  }
  const auto s = split_corpus(ex, 0.5, 0);
  EXPECT_EQ(s.train.size(), 694u);
  EXPECT_EQ(s.test.size(), 693u);
}

TEST(Split, Rejections) {
  EXPECT_THROW(split_corpus(balanced(1), 0.0, 1), ValidationError);
  EXPECT_THROW(split_corpus(balanced(1), 1.0, 1), ValidationError);
  EXPECT_THROW(split_corpus({balanced(1)[0]}, 0.5, 1), ValidationError);
  auto one_class = balanced(3);
  std::erase_if(one_class, [](const auto& e) { return e.label == Label::kNonNormative; });
  EXPECT_THROW(split_corpus(one_class, 0.5, 1), ValidationError);
  auto assigned = balanced(2);
  assigned[0].split = Split::kTrain;
  EXPECT_THROW(split_corpus(assigned, 0.5, 1), ValidationError);
}

TEST(Split, PartitionAndStratificationProperties) {
  Rng gen(99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabeledExample> ex;
    const int n = 2 + static_cast<int>(gen.below(80));
    for (int i = 0; i < n; ++i) {
      ex.push_back({"e" + std::to_string(i), "t",
                    (i == 0 || (i > 1 && gen.below(3) == 0)) ? Label::kNormative
                                                             : Label::kNonNormative,
                    Source::kUser, Split::kUnassigned});
    }
    const double fraction = 0.05 + 0.9 * gen.uniform();
    const auto s = split_corpus(ex, fraction, gen.next());
    EXPECT_EQ(s.train.size(), static_cast<std::size_t>(std::floor(fraction * n + 0.5)));
    std::set<std::string> tr, te;
    for (const auto& e : s.train) tr.insert(e.id);
    for (const auto& e : s.test) te.insert(e.id);
    std::vector<std::string> both;
    std::set_intersection(tr.begin(), tr.end(), te.begin(), te.end(), std::back_inserter(both));
    EXPECT_TRUE(both.empty());
    EXPECT_EQ(tr.size() + te.size(), static_cast<std::size_t>(n));
    for (Label l : {Label::kNormative, Label::kNonNormative}) {
      const double total = static_cast<double>(std::count_if(
          ex.begin(), ex.end(), [&](const auto& e) { return e.label == l; }));
      const double in_train = static_cast<double>(std::count_if(
          s.train.begin(), s.train.end(), [&](const auto& e) { return e.label == l; }));
      EXPECT_LE(std::abs(in_train - fraction * total), 1.0 + 1e-9);
    }
  }
}

// ---- persistence ----------------------------------------------------------

TEST(Persistence, RoundTripPreservesOrder) {
  testing_util::TempDir dir;
  std::vector<LabeledExample> ex{
      {"a", "He shares.", Label::kNormative, Source::kGoofusGallant, Split::kTrain},
      {"b", "Caf\xC3\xA9 \"quoted\"", Label::kNonNormative, Source::kPlotto, Split::kTest},
      {"c", "x", Label::kNormative, Source::kSurrogate, Split::kUnassigned}};
  const auto path = dir.file("c.jsonl");
  save_examples(ex, path);
  EXPECT_EQ(load_examples(path), ex);
  const auto bytes = text::read_file(path);
  save_examples(load_examples(path), path);
  EXPECT_EQ(text::read_file(path), bytes);
  EXPECT_EQ(bytes.substr(0, bytes.find('\n')),
            R"({"id":"a","text":"He shares.","label":"normative","source":"gg","split":"train"})");
}

TEST(Persistence, MissingLabelNamesLineAndField) {
  const std::string body =
      R"({"id":"a","text":"x","label":"normative","source":"gg","split":"train"})" "\n"
      R"({"id":"b","text":"y","source":"gg","split":"train"})" "\n";
  try {
    parse_examples(body, "gg.jsonl");
    FAIL();
  } catch (const RecordError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.field(), "label");
  }
}

TEST(Persistence, UnknownLabelRejected) {
  EXPECT_THROW(parse_examples(
                   R"({"id":"a","text":"x","label":"good","source":"gg","split":"train"})",
                   "x"),
               RecordError);
}

TEST(Persistence, EmptyFileIsEmptyCorpus) {
  testing_util::TempDir dir;
  const auto path = dir.file("empty.jsonl");
  std::ofstream(path).close();
  EXPECT_TRUE(load_examples(path).empty());
  EXPECT_EQ(detect_kind(path), FileKind::kEmpty);
}

TEST(Persistence, PairsRoundTripAndDetection) {
  testing_util::TempDir dir;
  const std::vector<PanelPair> pairs{{"p1", "good", "bad", 1999}, {"p2", "kind", "rude", {}}};
  const auto path = dir.file("pairs.jsonl");
  save_pairs(pairs, path);
  EXPECT_EQ(load_pairs(path), pairs);
  EXPECT_EQ(detect_kind(path), FileKind::kPairs);
  EXPECT_NE(text::read_file(path).find("\"year\":null"), std::string::npos);
}

TEST(Persistence, SaveLoadSaveByteIdenticalForSurrogate) {
  testing_util::TempDir dir;
  const auto ex = explode_pairs(generate_surrogate(50, 4), Source::kSurrogate);
  const auto p1 = dir.file("a.jsonl");
  const auto p2 = dir.file("b.jsonl");
  save_examples(ex, p1);
  save_examples(load_examples(p1), p2);
  EXPECT_EQ(text::read_file(p1), text::read_file(p2));
}

TEST(Exclusions, RemovesListedIds) {
  testing_util::TempDir dir;
  const auto path = dir.file("exclude.txt");
  std::ofstream(path) << "# offensive\nb\n\n  c  \n";
  const auto ids = load_exclusions(path);
  EXPECT_EQ(ids, (std::set<std::string>{"b", "c"}));
  const auto kept = apply_exclusions(balanced(2), {"p0", "n1"});
  EXPECT_EQ(kept.size(), 2u);
}

TEST(Manifest, CountsMustBeNonIncreasing) {
  DatasetManifest m{"plotto", 1462, 900, 555, 0.5, 7};
  const auto back = manifest_from_json(to_json(m));
  EXPECT_EQ(back.selected, 900);
  EXPECT_EQ(*back.consensus, 555);
  m.consensus = 901;
  EXPECT_THROW(to_json(m), ValidationError);
}

// ---- surrogate ------------------------------------------------------------

TEST(Surrogate, SinglePairValid) {
  const auto p = generate_surrogate(1, 0);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_FALSE(p[0].positive_text.empty());
  EXPECT_NE(p[0].positive_text, p[0].negative_text);
}

TEST(Surrogate, Deterministic) {
  EXPECT_EQ(serialize_pairs(generate_surrogate(600, 0)),
            serialize_pairs(generate_surrogate(600, 0)));
  EXPECT_NE(serialize_pairs(generate_surrogate(20, 0)),
            serialize_pairs(generate_surrogate(20, 1)));
}

TEST(Surrogate, RejectsNonPositiveCount) {
  EXPECT_THROW(generate_surrogate(0, 0), ValidationError);
}

TEST(Surrogate, ClassVocabulariesOverlap) {
  for (auto domain : {SurrogateDomain::kEveryday, SurrogateDomain::kAdventure}) {
    const auto pairs = generate_surrogate(600, 0, domain);
    std::set<std::string> pos, neg;
    for (const auto& p : pairs) {
      for (auto& t : text::tokenize(p.positive_text, true)) pos.insert(t);
      for (auto& t : text::tokenize(p.negative_text, true)) neg.insert(t);
    }
    std::set<std::string> inter, uni;
    std::set_intersection(pos.begin(), pos.end(), neg.begin(), neg.end(),
                          std::inserter(inter, inter.end()));
    std::set_union(pos.begin(), pos.end(), neg.begin(), neg.end(),
                   std::inserter(uni, uni.end()));
    const double jaccard = static_cast<double>(inter.size()) / static_cast<double>(uni.size());
    EXPECT_GE(jaccard, 0.6) << "domain " << static_cast<int>(domain);
  }
}

TEST(Surrogate, DomainsAreDisjoint) {
  std::set<std::string> everyday;
  for (const auto& p : generate_surrogate(600, 0)) {
    everyday.insert(p.positive_text);
    everyday.insert(p.negative_text);
  }
  for (const auto& p : generate_surrogate(200, 1, SurrogateDomain::kAdventure)) {
    EXPECT_EQ(everyday.count(p.positive_text), 0u);
    EXPECT_EQ(everyday.count(p.negative_text), 0u);
  }
}

TEST(Surrogate, DistinctWhileCapacityAllowsThenReuses) {
  const auto pairs = generate_surrogate(600, 0);
  std::set<std::string> texts;
  for (const auto& p : pairs) texts.insert(p.positive_text + "|" + p.negative_text);
  EXPECT_EQ(texts.size(), 600u);

  const auto cap = surrogate_capacity(SurrogateDomain::kAdventure);
  ASSERT_LT(cap, 200000u);
  // Past capacity the generator reuses texts instead of failing.
  const auto many = generate_surrogate(static_cast<int>(cap + 100), 5, SurrogateDomain::kAdventure);
  EXPECT_EQ(many.size(), cap + 100);
  std::set<std::string> ids;
  for (const auto& p : many) ids.insert(p.id);
  EXPECT_EQ(ids.size(), many.size());
}

}  // namespace
}  // namespace normprior::corpus
