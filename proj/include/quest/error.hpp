#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace quest {

/// Error categories. The CLI maps them onto process exit codes.
enum class ErrorCode {
    Validation,        ///< bad input, schema, query, or configuration
    Provider,          ///< extraction or embedding provider failure
    BudgetExceeded,    ///< token budget hit mid-session
    Io,                ///< file or format problem
    Internal,
};

class Error : public std::runtime_error
{
    ErrorCode code_;

public:
    Error(ErrorCode code, const std::string &what) : std::runtime_error(what), code_(code) { }
    ErrorCode code() const noexcept { return code_; }
};

#define QUEST_DECLARE_ERROR(NAME, CODE)                                                  \
    struct NAME : Error                                                                  \
    {                                                                                    \
        explicit NAME(const std::string &what) : Error(ErrorCode::CODE, #NAME ": " + what) { } \
    }

QUEST_DECLARE_ERROR(DuplicateId, Validation);
QUEST_DECLARE_ERROR(EmptyDocument, Validation);
QUEST_DECLARE_ERROR(UnknownCorpus, Validation);
QUEST_DECLARE_ERROR(InvalidSchema, Validation);
QUEST_DECLARE_ERROR(UnknownSymbol, Validation);
QUEST_DECLARE_ERROR(TypeError, Validation);
QUEST_DECLARE_ERROR(DimMismatch, Validation);
QUEST_DECLARE_ERROR(CalibrationFailed, Validation);
QUEST_DECLARE_ERROR(PlannerError, Validation);
QUEST_DECLARE_ERROR(EmptyJoinInput, Validation);
QUEST_DECLARE_ERROR(ValidationError, Validation);
QUEST_DECLARE_ERROR(EvidenceUnavailable, Provider);
QUEST_DECLARE_ERROR(ProviderError, Provider);
QUEST_DECLARE_ERROR(BudgetExceeded, BudgetExceeded);
QUEST_DECLARE_ERROR(IoError, Io);

#undef QUEST_DECLARE_ERROR

/// Query syntax error carrying the byte offset into the query text.
struct ParseError : Error
{
    std::size_t position;
    ParseError(std::size_t pos, const std::string &what)
        : Error(ErrorCode::Validation, "ParseError at " + std::to_string(pos) + ": " + what)
        , position(pos)
    { }
};

/// Malformed record in a line-delimited file.
struct FormatError : Error
{
    std::string path;
    std::size_t line;
    FormatError(std::string p, std::size_t l, const std::string &what)
        : Error(ErrorCode::Io, p + ":" + std::to_string(l) + ": " + what), path(std::move(p)), line(l)
    { }
};

}
