"""DEX file model: tables, classes and decoded method bodies."""

from .insns import (CONST, IF_OPS, IF_TEST, INVOKE, MOVE, OTHER, SGET_SDK_INT, DecodedInsn,
                    decode_stream, walk_instructions)
from .parser import SDK_INT_FIELD, ClassDef, DexImage, FieldRef, MethodBody, check_magic, parse_dex

__all__ = [
    "CONST", "IF_OPS", "IF_TEST", "INVOKE", "MOVE", "OTHER", "SGET_SDK_INT",
    "DecodedInsn", "decode_stream", "walk_instructions",
    "SDK_INT_FIELD", "ClassDef", "DexImage", "FieldRef", "MethodBody", "check_magic", "parse_dex",
]
