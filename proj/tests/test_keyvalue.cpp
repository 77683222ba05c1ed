#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "islanding/errors.hpp"
#include "islanding/keyvalue.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace islanding;

TEST_CASE("parse, comments and last-wins") {
    auto doc = KeyValueDoc::parse_string(
        "# header\n"
        "a = 1\n"
        "b = two words  # trailing\n"
        "url = http://x#frag\n"
        "a = 2\n"
        "event = one\n"
        "event = two\n");
    CHECK(doc.get_double("a", 0) == 2.0);
    CHECK(doc.get_string("b", "") == "two words");
    CHECK(doc.get_string("url", "") == "http://x#frag");
    auto ev = doc.get_all("event");
    REQUIRE(ev.size() == 2);
    CHECK(ev[1]->value == "two");
    CHECK(doc.get_double("missing", 7.5) == 7.5);
    CHECK(std::isinf(KeyValueDoc::parse_string("x = inf\n").get_double("x", 0)));
}

TEST_CASE("typed getters report locations") {
    auto doc = KeyValueDoc::parse_string("n = 1.5\nflag = maybe\n", "cfg.scn");
    try {
        doc.get_int("n", 0);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.line() == 1);
        CHECK(std::string(e.what()).find("cfg.scn:1") != std::string::npos);
    }
    CHECK_THROWS_AS(doc.get_bool("flag", false), ConfigError);
    CHECK_THROWS_AS(doc.require_double("absent"), ConfigError);
    CHECK_THROWS_AS(KeyValueDoc::parse_string("no equals sign\n"), ConfigError);
}

TEST_CASE("overrides and includes") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "islanding_kv_test";
    fs::create_directories(dir / "sub");
    std::ofstream(dir / "sub" / "base.scn") << "x = 1\ny = 1\n";
    std::ofstream(dir / "main.scn") << "include = sub/base.scn\ny = 2\n";
    auto doc = KeyValueDoc::load(dir / "main.scn");
    CHECK(doc.get_double("x", 0) == 1.0);
    CHECK(doc.get_double("y", 0) == 2.0);
    doc.apply_override("y=3");
    CHECK(doc.get_double("y", 0) == 3.0);
    CHECK_THROWS_AS(doc.apply_override("novalue"), ConfigError);

    std::ofstream(dir / "loop.scn") << "include = loop.scn\n";
    CHECK_THROWS_AS(KeyValueDoc::load(dir / "loop.scn"), ConfigError);
    CHECK_THROWS_AS(KeyValueDoc::load(dir / "absent.scn"), ConfigError);
    fs::remove_all(dir);
}
