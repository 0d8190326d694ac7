import gettext
import locale
import logging

from core.config.config import Config
from core.config.settings import DEFAULT_LANGUAGE, LOCALE_DIR, SUPPORTED_LANGUAGES

logger = logging.getLogger(__name__)


def _match_supported(language: str | None) -> str | None:
    """Devolve a língua suportada correspondente (forma completa ou curta), se existir."""
    if not language:
        return None
    if language in SUPPORTED_LANGUAGES:
        return language
    short_lang = language.split('_')[0]
    return short_lang if short_lang in SUPPORTED_LANGUAGES else None


def get_best_language() -> str:
    """
    Determina a língua a usar: primeiro a chave 'run.language' do config.ini,
    depois a língua do sistema e, por fim, a língua padrão.
    """
    try:
        configured = Config().LANGUAGE
    except ValueError:
        # Um config.ini inválido é reportado mais tarde pelo fluxo principal.
        configured = None

    chosen = _match_supported(configured)
    if chosen:
        return chosen

    try:
        system_lang, _encoding = locale.getlocale()
    except ValueError:
        system_lang = None

    chosen = _match_supported(system_lang)
    if chosen:
        logger.info(f"Usar a língua do sistema '{chosen}'.")
        return chosen

    logger.warning(f"A língua '{configured or system_lang}' não é suportada. A usar '{DEFAULT_LANGUAGE}'.")
    return DEFAULT_LANGUAGE


active_language = get_best_language()

try:
    translation = gettext.translation('messages', localedir=str(LOCALE_DIR), languages=[active_language])
    _ = translation.gettext
    logger.info(f"Tradução para '{active_language}' carregada com sucesso.")
except FileNotFoundError:
    # Sem catálogo .mo: as mensagens ficam no texto original (inglês).
    _ = gettext.gettext
