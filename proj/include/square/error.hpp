// Copyright (C) 2026 The SQUARE Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace square {

enum class ErrorCode {
    // store
    BadMagic,
    DimMismatch,
    DuplicateId,
    TruncatedFile,
    TrailingData,
    NonFiniteValue,
    ZeroVector,
    // fusion
    AlphaOutOfRange,
    BetaOutOfRange,
    // ranker
    EmptyGallery,
    UnknownId,
    // grid / image
    IndexOutOfRange,
    EmptyImage,
    WrongCount,
    ImageDecode,
    // mllm
    ApiTimeout,
    ApiRefusal,
    EmptyCompletion,
    TransportError,
    ApiError,
    // rerank
    DuplicateIndex,
    LengthMismatch,
    // metrics
    EmptyTargets,
    MissingRanking,
    MissingSubset,
    // pipeline
    MissingEmbedding,
    MissingImage,
    // plumbing
    IoError,
    ConfigError,
    ParseError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace square
