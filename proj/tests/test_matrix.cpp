#include "dcoral/error.hpp"
#include "dcoral/matrix.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace dcoral;

TEST_CASE("matrix shape and zero dimensions") {
    Matrix m(2, 3, 1.5);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK(m(1, 2) == 1.5);
    CHECK_THROWS_AS(Matrix(0, 3), Error);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), Error);
    CHECK(Matrix().empty());
}

TEST_CASE("products agree with the transposed forms") {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const Matrix b = Matrix::from_rows({{1, -1, 0}, {2, 0, 1}});
    const Matrix ab = matmul(a, b);
    CHECK(ab == Matrix::from_rows({{5, -1, 2}, {11, -3, 4}, {17, -5, 6}}));
    CHECK(matmul_tn(a, a) == matmul(a.transpose(), a));
    CHECK(matmul_nt(a, a) == matmul(a, a.transpose()));
    CHECK_THROWS_AS(matmul(a, a), Error);
    CHECK(matmul(Matrix::identity(3), a) == a);
}

TEST_CASE("gather rows") {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
    const std::size_t idx[] = {2, 0, 2};
    CHECK(a.gather_rows(idx) == Matrix::from_rows({{5, 6}, {1, 2}, {5, 6}}));
}

TEST_CASE("double text round trip is exact") {
    for (double v : {0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, 5e-324, 0.0}) {
        double back = 0.0;
        REQUIRE(parse_double(format_double(v), back));
        CHECK(back == v);
    }
    double x = 0.0;
    CHECK(parse_double("+2.5", x));
    CHECK(x == 2.5);
    CHECK_FALSE(parse_double("2.5abc", x));
    CHECK_FALSE(parse_double("", x));
}

TEST_CASE("csv round trip and line-numbered errors") {
    const Matrix a = Matrix::from_rows({{0.1, -2}, {3e-7, 4}});
    std::stringstream ss;
    write_csv(ss, a);
    CHECK(read_csv(ss) == a);

    std::istringstream bad("1,2\n3,x\n");
    try {
        read_csv(bad);
        FAIL("expected ParseError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ParseError);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::istringstream ragged("1,2\n3\n");
    CHECK_THROWS_AS(read_csv(ragged), Error);
    std::istringstream commented("# header\n1,2\n");
    CHECK(read_csv(commented) == Matrix::from_rows({{1, 2}}));
}

TEST_CASE("finiteness") {
    Matrix m(2, 2);
    CHECK(m.all_finite());
    m(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(m.all_finite());
}
