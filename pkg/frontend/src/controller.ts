// Play-session state machine, independent of the DOM so it can be tested
// headlessly. The UI layer renders whatever screen this exposes.

import type {
    Api, ChunkView, ChoiceOption, GameData, NarrativeEntry,
} from "./api.js";

export interface DialogueScreen {
    kind: "dialogue";
    chapter: number;
    speakerLabel: string;
    spriteUrl: string | null;
    unknownSpeaker: boolean;
    text: string;
    backgroundUrl: string;
}

export interface ChoicesScreen {
    kind: "choices";
    chapter: number;
    options: ChoiceOption[];
    backgroundUrl: string;
}

export interface ChapterEndScreen {
    kind: "chapter-end";
    finishedChapter: number;
    totalChapters: number;
    backgroundUrl: string;
}

export interface GameEndScreen {
    kind: "game-end";
    endingLabel: string;
    endingDescription: string;
    choiceHistory: number[];
    backgroundUrl: string;
}

export interface ErrorScreen {
    kind: "error";
    message: string;
}

export type Screen =
    | DialogueScreen
    | ChoicesScreen
    | ChapterEndScreen
    | GameEndScreen
    | ErrorScreen;

const FALLBACK_ASSET_ID = "_fallback";

export class PlayController {
    private game: GameData | null = null;
    private chunk: ChunkView | null = null;
    private line = 0;
    private backgroundUrl = "";
    private visited: string[] = [];
    private choices: number[] = [];
    private loading = false;
    private screen: Screen = { kind: "error", message: "not started" };
    private lastAction: (() => Promise<Screen>) | null = null;

    constructor(private api: Api, private storyId: string) {}

    current(): Screen {
        return this.screen;
    }

    isLoading(): boolean {
        return this.loading;
    }

    visitedChunkIds(): string[] {
        return [...this.visited];
    }

    choiceHistory(): number[] {
        return [...this.choices];
    }

    async begin(): Promise<Screen> {
        return this.guarded(async () => {
            this.game = await this.api.gameData(this.storyId);
            const first = await this.api.start(this.storyId);
            this.visited = [];
            this.choices = [];
            this.backgroundUrl = this.api.assetUrl(
                this.storyId, "scenes", FALLBACK_ASSET_ID);
            this.enterChunk(first);
            return this.screen;
        });
    }

    restart(): Promise<Screen> {
        return this.begin();
    }

    /** Tap/click: next line, or past a chapter card into the next chapter. */
    async advance(): Promise<Screen> {
        if (this.screen.kind === "dialogue") {
            this.line += 1;
            this.refreshScreen();
            return this.screen;
        }
        if (this.screen.kind === "chapter-end") {
            return this.guarded(async () => {
                const child = await this.api.next(this.chunk!.id);
                this.enterChunk(child);
                return this.screen;
            });
        }
        return this.screen;
    }

    async choose(index: number): Promise<Screen> {
        if (this.screen.kind !== "choices") {
            return this.screen;
        }
        return this.guarded(async () => {
            const child = await this.api.next(this.chunk!.id, index);
            this.choices.push(index);
            this.enterChunk(child);
            return this.screen;
        });
    }

    /** Re-run the fetch that produced the current error screen. */
    async retry(): Promise<Screen> {
        if (this.screen.kind === "error" && this.lastAction) {
            return this.guarded(this.lastAction);
        }
        return this.screen;
    }

    private async guarded(action: () => Promise<Screen>): Promise<Screen> {
        if (this.loading) {
            return this.screen;
        }
        this.loading = true;
        this.lastAction = action;
        try {
            return await action();
        } catch (err) {
            this.screen = {
                kind: "error",
                message: err instanceof Error ? err.message : String(err),
            };
            return this.screen;
        } finally {
            this.loading = false;
        }
    }

    private enterChunk(chunk: ChunkView): void {
        this.chunk = chunk;
        this.line = 0;
        this.visited.push(chunk.id);
        this.refreshScreen();
    }

    private refreshScreen(): void {
        const chunk = this.chunk!;
        if (this.line < chunk.narratives.length) {
            this.screen = this.dialogueScreen(chunk.narratives[this.line],
                                              chunk.chapter);
            return;
        }
        if (chunk.status === "BRANCHING_WITHOUT_CHOICE"
            || chunk.status === "BRANCHING_WITH_CHOICE") {
            this.screen = {
                kind: "choices",
                chapter: chunk.chapter,
                options: chunk.choices,
                backgroundUrl: this.backgroundUrl,
            };
            return;
        }
        if (chunk.status === "CHAPTER_END") {
            this.screen = {
                kind: "chapter-end",
                finishedChapter: chunk.chapter,
                totalChapters: this.game!.chapter_synopses.length,
                backgroundUrl: this.backgroundUrl,
            };
            return;
        }
        const ending = this.game!.endings.find(
            (e) => e.id === chunk.selected_ending_id);
        this.screen = {
            kind: "game-end",
            endingLabel: ending ? ending.label : "The End",
            endingDescription: ending ? ending.description : "",
            choiceHistory: this.choiceHistory(),
            backgroundUrl: this.backgroundUrl,
        };
    }

    private dialogueScreen(entry: NarrativeEntry,
                           chapter: number): DialogueScreen {
        if (entry.scene_id) {
            this.backgroundUrl = this.api.assetUrl(
                this.storyId, "scenes", entry.scene_id);
        }
        let speakerLabel: string;
        let spriteUrl: string | null;
        if (entry.speaker === "NARRATOR") {
            speakerLabel = "Narrator";
            spriteUrl = null;
        } else {
            const known = this.game!.main_characters.find(
                (c) => c.id === entry.speaker);
            speakerLabel = known ? known.name : entry.speaker;
            // Unknown speakers still get a sprite URL: the server answers
            // any id with the default image, so play never stops.
            spriteUrl = this.api.assetUrl(
                this.storyId, "characters", entry.speaker);
        }
        return {
            kind: "dialogue",
            chapter,
            speakerLabel,
            spriteUrl,
            unknownSpeaker: entry.unknown_speaker === true,
            text: entry.text,
            backgroundUrl: this.backgroundUrl,
        };
    }
}
