from typing import Any


class ConfigurationError(ValueError):
    """Configuração inválida ou incoerente (ficheiro, perfil ou parâmetros)."""


class UsageError(ValueError):
    """Argumentos de linha de comandos inválidos."""


class DivergenceError(ArithmeticError):
    """Estado não finito ou fora do limite de divergência durante a integração."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class PoisonedRunError(FloatingPointError):
    """
    Valor não finito (NaN/inf) detetado durante o treino.
    Transporta um dicionário de diagnóstico para ser gravado em disco.
    """

    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None):
        super().__init__(message)
        self.diagnostics: dict[str, Any] = diagnostics or {}


class StorageError(OSError):
    """Erro genérico de leitura/escrita dos ficheiros binários."""


class CorruptFileError(StorageError):
    """Ficheiro truncado ou com cabeçalho ilegível."""


class VersionMismatchError(StorageError):
    """Versão do formato diferente da suportada."""


class SpecMismatchError(StorageError):
    """O FeatureSpec gravado não corresponde ao esperado."""
